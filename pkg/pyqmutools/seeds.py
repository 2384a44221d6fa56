"""Named seeds derived from one master seed."""

import hashlib


class SeedBook:
    """Hands out a reproducible 32-bit seed per name and remembers it.

    The same ``(master, name)`` pair always yields the same seed, so any
    sub-computation can be replayed from the manifest alone.
    """

    def __init__(self, master: int):
        self.master = int(master)
        self.issued = {}

    def seed(self, name: str) -> int:
        if name not in self.issued:
            digest = hashlib.sha256(f"{self.master}/{name}".encode()).digest()
            self.issued[name] = int.from_bytes(digest[:4], "big")
        return self.issued[name]

    def __call__(self, name: str) -> int:
        return self.seed(name)

    def to_dict(self) -> dict:
        issued = dict(sorted(self.issued.items()))
        return {"master": self.master, "issued": issued}
