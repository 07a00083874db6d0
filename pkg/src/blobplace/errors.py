"""Error taxonomy shared by the optimizer, service, and CLI.

Exit codes: 0 ok, 2 validation (bad inputs, protocol violations),
3 transport (endpoint unreachable after retries), 4 numeric abort.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_NUMERIC = 4


class ValidationError(ValueError):
    """Bad user input or malformed configuration."""


class TransportError(RuntimeError):
    """Remote endpoint unreachable after retries."""


class ProtocolError(RuntimeError):
    """Remote endpoint responded, but not in the agreed wire format."""


class NumericError(RuntimeError):
    """Optimization hit a non-finite value and aborted."""


def exit_code_for_kind(kind: str) -> int:
    return {
        "validation": EXIT_VALIDATION,
        "transport": EXIT_TRANSPORT,
        "numeric": EXIT_NUMERIC,
    }.get(kind, 1)


def kind_for_exception(exc: BaseException) -> str:
    if isinstance(exc, TransportError):
        return "transport"
    if isinstance(exc, NumericError):
        return "numeric"
    # ProtocolError counts as validation: the wire contract was violated
    return "validation"
