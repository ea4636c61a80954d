"""Seed derivation.

Every random stream is keyed by ``(master seed, role, index)``.  The role is
hashed to a fixed 64-bit constant, xor-ed with the master seed and the index,
then passed through the splitmix64 finaliser.  Adding replicas or roles never
changes the streams of existing ones.
"""

import hashlib

MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def role_constant(role: str) -> int:
    return int.from_bytes(hashlib.sha256(role.encode()).digest()[:8], "little")


def derive_seed(master: int, role: str, index: int = 0) -> int:
    return splitmix64((int(master) & MASK64) ^ role_constant(role) ^ (int(index) & MASK64))
