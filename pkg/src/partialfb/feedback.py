"""Reverse-link frame codec.

Frame layout (all multi-byte fields big-endian)::

    byte 0      kind  (0x01 start, 0x02 step, 0x03 end)
    bytes 1-2   iteration counter
    byte 3      n_R                       (step frames only)
    bytes 4..   n_R indices, b bits each, MSB-first, zero-padded to a byte

Control frames are always 3 bytes; a step frame is ``4 + ceil(n_R * b / 8)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import PartialFeedbackError

MAX_ITERATION = 0xFFFF
MAX_BITS = 16


class FrameError(PartialFeedbackError, ValueError):
    pass


class TruncatedFrameError(FrameError):
    pass


class UnknownKindError(FrameError):
    pass


class MalformedFrameError(FrameError):
    pass


class MessageKind(enum.IntEnum):
    START = 0x01
    STEP = 0x02
    END = 0x03


@dataclass(frozen=True)
class FeedbackMessage:
    kind: MessageKind
    iteration: int
    indices: tuple[int, ...] = ()

    @classmethod
    def start(cls) -> "FeedbackMessage":
        return cls(MessageKind.START, 0)

    @classmethod
    def step(cls, iteration: int, indices) -> "FeedbackMessage":
        return cls(MessageKind.STEP, iteration, tuple(int(i) for i in indices))

    @classmethod
    def end(cls, iteration: int) -> "FeedbackMessage":
        return cls(MessageKind.END, iteration)


def frame_length(kind: MessageKind, n_r: int = 0, bits_per_index: int = 0) -> int:
    if kind == MessageKind.STEP:
        return 4 + (n_r * bits_per_index + 7) // 8
    return 3


def _check_bits(bits_per_index: int) -> None:
    if not 1 <= bits_per_index <= MAX_BITS:
        raise FrameError(f"bits_per_index must be in 1..{MAX_BITS}, got {bits_per_index}")


def encode_message(msg: FeedbackMessage, bits_per_index: int) -> bytes:
    _check_bits(bits_per_index)
    kind = MessageKind(msg.kind)
    if not 0 <= msg.iteration <= MAX_ITERATION:
        raise FrameError(f"iteration {msg.iteration} does not fit in 16 bits")
    head = bytes([kind]) + msg.iteration.to_bytes(2, "big")
    if kind != MessageKind.STEP:
        if msg.indices:
            raise FrameError("control frames carry no indices")
        if kind == MessageKind.START and msg.iteration != 0:
            raise FrameError("start frame must carry iteration 0")
        return head
    n_r = len(msg.indices)
    if not 1 <= n_r <= 255:
        raise FrameError(f"step frame needs 1..255 indices, got {n_r}")
    acc = 0
    for idx in msg.indices:
        if not 0 <= idx < (1 << bits_per_index):
            raise FrameError(f"index {idx} does not fit in {bits_per_index} bits")
        acc = (acc << bits_per_index) | idx
    nbits = n_r * bits_per_index
    nbytes = (nbits + 7) // 8
    acc <<= nbytes * 8 - nbits
    return head + bytes([n_r]) + acc.to_bytes(nbytes, "big")


def decode_message(frame: bytes, bits_per_index: int) -> FeedbackMessage:
    _check_bits(bits_per_index)
    frame = bytes(frame)
    if len(frame) < 1:
        raise TruncatedFrameError("empty frame")
    try:
        kind = MessageKind(frame[0])
    except ValueError:
        raise UnknownKindError(f"unknown frame kind 0x{frame[0]:02x}") from None
    if len(frame) < 3:
        raise TruncatedFrameError(f"frame of {len(frame)} bytes is shorter than the header")
    iteration = int.from_bytes(frame[1:3], "big")
    if kind != MessageKind.STEP:
        if len(frame) != 3:
            raise MalformedFrameError(f"control frame must be 3 bytes, got {len(frame)}")
        if kind == MessageKind.START and iteration != 0:
            raise MalformedFrameError("start frame must carry iteration 0")
        return FeedbackMessage(kind, iteration)
    if len(frame) < 4:
        raise TruncatedFrameError("step frame is missing its n_R byte")
    n_r = frame[3]
    if n_r == 0:
        raise MalformedFrameError("step frame with zero indices")
    expected = frame_length(kind, n_r, bits_per_index)
    if len(frame) < expected:
        raise TruncatedFrameError(f"step frame truncated: {len(frame)} of {expected} bytes")
    if len(frame) > expected:
        raise MalformedFrameError(f"step frame has {len(frame) - expected} trailing bytes")
    nbits = n_r * bits_per_index
    payload = frame[4:]
    acc = int.from_bytes(payload, "big")
    pad = len(payload) * 8 - nbits
    if acc & ((1 << pad) - 1):
        raise MalformedFrameError("nonzero pad bits")
    acc >>= pad
    mask = (1 << bits_per_index) - 1
    indices = [(acc >> (bits_per_index * (n_r - 1 - i))) & mask for i in range(n_r)]
    return FeedbackMessage(kind, iteration, tuple(indices))
