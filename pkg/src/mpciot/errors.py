class MpcError(Exception):
    pass


class ProtocolAbort(MpcError):
    """Honest parties stop because a check failed.

    ``reason`` is a short machine-readable code such as ``open-inconsistent``,
    ``preprocessing-corrupt``, ``mul-verify-failed`` or ``auth-failed``.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class NetworkError(MpcError):
    pass


class FormatError(ValueError):
    pass
