"""Packing headers into the 104-bit tuple and reading effective-bit indices.

Layout: SrcIP occupies bits 0-31, DstIP 32-63, SrcPort 64-79, DstPort 80-95
and Proto 96-103.  Inside a field, offset 0 is the field's most significant
bit, so bit 0 of the tuple is the MSB of SrcIP and bit 103 is the LSB of Proto.
"""

from __future__ import annotations

from typing import Sequence

from .ruleset import FIELD_WIDTHS, NUM_FIELDS, PacketHeader

TOTAL_BITS = 104
MAX_INDEX_BITS = 24
FIELD_OFFSETS = (0, 32, 64, 80, 96)


def field_window(dim: int) -> range:
    """Global bit positions owned by field ``dim``."""
    return range(FIELD_OFFSETS[dim], FIELD_OFFSETS[dim] + FIELD_WIDTHS[dim])


def global_position(dim: int, offset: int) -> int:
    if not 0 <= offset < FIELD_WIDTHS[dim]:
        raise ValueError(f"bit offset {offset} outside field {dim}")
    return FIELD_OFFSETS[dim] + offset


def field_of(pos: int) -> tuple[int, int]:
    """Map a global position back to ``(dim, offset)``."""
    if not 0 <= pos < TOTAL_BITS:
        raise ValueError(f"bit position {pos} outside 0..{TOTAL_BITS - 1}")
    for dim in reversed(range(NUM_FIELDS)):
        if pos >= FIELD_OFFSETS[dim]:
            return dim, pos - FIELD_OFFSETS[dim]
    raise AssertionError("unreachable")


def pack_header(header: Sequence[int]) -> int:
    """Return the 104-bit tuple as an int whose MSB is tuple bit 0."""
    packed = 0
    for dim in range(NUM_FIELDS):
        packed = (packed << FIELD_WIDTHS[dim]) | int(header[dim])
    return packed


def unpack_header(packed: int) -> PacketHeader:
    if not 0 <= packed < 1 << TOTAL_BITS:
        raise ValueError("packed value does not fit in 104 bits")
    values = []
    for dim in reversed(range(NUM_FIELDS)):
        width = FIELD_WIDTHS[dim]
        values.append(packed & ((1 << width) - 1))
        packed >>= width
    return PacketHeader(*reversed(values))


def bit_at(packed: int, pos: int) -> int:
    return (packed >> (TOTAL_BITS - 1 - pos)) & 1


def check_positions(positions: Sequence[int]) -> None:
    if len(positions) > MAX_INDEX_BITS:
        raise ValueError(f"{len(positions)} index bits exceed the {MAX_INDEX_BITS}-bit table guard")
    if len(set(positions)) != len(positions):
        raise ValueError(f"duplicate bit positions in {list(positions)}")
    for p in positions:
        if not 0 <= p < TOTAL_BITS:
            raise ValueError(f"bit position {p} outside 0..{TOTAL_BITS - 1}")


def extract_packed(packed: int, positions: Sequence[int]) -> int:
    """Concatenate the bits at ``positions`` (first position is the MSB)."""
    index = 0
    for p in positions:
        index = (index << 1) | ((packed >> (TOTAL_BITS - 1 - p)) & 1)
    return index


def extract_index(header: Sequence[int], positions: Sequence[int]) -> int:
    check_positions(positions)
    return extract_packed(pack_header(header), positions)
