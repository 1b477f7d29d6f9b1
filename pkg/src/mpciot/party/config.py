"""Party configuration file (TOML).

Example::

    index = 1
    mode = "sh"
    http = "127.0.0.1:9001"
    mpc_listen = "127.0.0.1:9101"
    orchestrator = "http://127.0.0.1:8000"
    orchestrator_token = "party-1-secret"
    intake_token = "dispatch-secret"
    private_key = "p1.key.pem"
    public_keys = ["p1.pub", "p2.pub", "p3.pub"]
    model = "model.p1.bin"
    seed_prev = "<hex, shared with party 3>"
    seed_next = "<hex, shared with party 2>"

    [peers]
    2 = "127.0.0.1:9102"
    3 = "127.0.0.1:9103"

Relative paths resolve against the file's directory.  Public key files hold
the 256-byte modulus encoding as hex.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from cryptography.hazmat.primitives.asymmetric import rsa

from .. import keys
from ..errors import FormatError
from ..rss import MODES, PrfSetup


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise FormatError(f"bad address {text!r}, expected host:port")
    return host, int(port)


@dataclass
class PartyConfig:
    index: int
    private_key: rsa.RSAPrivateKey
    public_keys: list[bytes]
    peers: dict[int, tuple[str, int]]
    orchestrator: str
    orchestrator_token: str
    intake_token: str
    seed_prev: bytes
    seed_next: bytes
    model_path: Path | None = None
    mode: str = "sh"
    http: tuple[str, int] = ("127.0.0.1", 0)
    mpc_listen: tuple[str, int] = ("127.0.0.1", 0)
    net_timeout: float = 120.0

    def __post_init__(self):
        if self.index not in (1, 2, 3):
            raise FormatError("party index must be 1, 2 or 3")
        if self.mode not in MODES:
            raise FormatError(f"mode must be one of {MODES}")
        if len(self.public_keys) != 3:
            raise FormatError("three public keys are required")
        if keys.public_key_bytes(self.private_key) != self.public_keys[self.index - 1]:
            raise FormatError("private key does not match this party's public key")

    @property
    def prf(self) -> PrfSetup:
        return PrfSetup(self.index, self.seed_prev, self.seed_next)

    @classmethod
    def load(cls, path) -> "PartyConfig":
        path = Path(path)
        raw = tomllib.loads(path.read_text())
        base = path.parent

        def rel(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        return cls(
            index=int(raw["index"]),
            mode=raw.get("mode", "sh"),
            private_key=keys.load_private_key(rel(raw["private_key"]).read_bytes()),
            public_keys=[bytes.fromhex(rel(p).read_text().strip()) for p in raw["public_keys"]],
            peers={int(k): parse_addr(v) for k, v in raw["peers"].items()},
            orchestrator=raw["orchestrator"],
            orchestrator_token=raw["orchestrator_token"],
            intake_token=raw["intake_token"],
            seed_prev=bytes.fromhex(raw["seed_prev"]),
            seed_next=bytes.fromhex(raw["seed_next"]),
            model_path=rel(raw["model"]) if raw.get("model") else None,
            http=parse_addr(raw.get("http", "127.0.0.1:0")),
            mpc_listen=parse_addr(raw.get("mpc_listen", "127.0.0.1:0")),
            net_timeout=float(raw.get("net_timeout", 120.0)),
        )
