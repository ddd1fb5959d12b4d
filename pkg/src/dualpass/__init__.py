"""Dual-password login/authentication: a user-typed login password is turned
into a system-held authentication password by a per-account converter, and
only the registered smartphone may start the conversion."""

from .convcore import (
    ConversionUnit,
    ConverterSpec,
    GeneratorConfig,
    Label,
    Order,
    convert_chars,
    generate_auth_password,
    generate_converter,
    insert_string,
    parse_label,
    shuffle_strings,
)
from .credstore import AccountRecord, CredentialStore, DeviceDescriptor, DeviceKind
from .identity import IdentifierStrategy, ProcessIdentifier, derive_identifier, verify_identifier
from .policy import PolicyConfig, char_classes, classify_field_input, validate_auth_password, validate_login_password
from .server import AuthServer, FieldState, MockClock, PasswordResult, ServerConfig

__version__ = "0.1.0"
