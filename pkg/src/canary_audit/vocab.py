"""Symbol inventory shared by the text, model, and channel layers.

Indices 0-25 are the letters 'a'-'z', 26 is the word separator (space),
27 is the end-of-sequence marker and 28 is the begin-of-sequence padding
symbol. Only 0-27 are ever scored; the padding symbol appears in model
contexts exclusively. Stored text uses 0-26 only.
"""

from dataclasses import dataclass, field

import numpy as np

N_LETTERS = 26
SPACE = 26
EOS = 27
PAD = 28
N_SCORED = 28  # letters + space + EOS
N_SYMBOLS = 29  # scored symbols + padding


@dataclass(frozen=True)
class Vocab:
    """The fixed 29-symbol inventory with its char<->index bijection."""

    symbols: tuple = field(
        default=tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "<eos>", "<pad>")
    )

    def char_to_index(self, ch: str) -> int:
        if len(ch) == 1 and "a" <= ch <= "z":
            return ord(ch) - ord("a")
        if ch == " ":
            return SPACE
        raise ValueError(f"character {ch!r} is outside the text inventory")

    def index_to_char(self, idx: int) -> str:
        if 0 <= idx <= SPACE:
            return self.symbols[idx]
        raise ValueError(f"index {idx} has no character form")

    def encode(self, text: str) -> np.ndarray:
        """Text -> int32 symbol indices (0-26). Rejects anything else."""
        try:
            codes = np.frombuffer(text.encode("ascii"), dtype=np.uint8)
        except UnicodeEncodeError:
            raise ValueError("text contains characters outside the inventory") from None
        sym = _CHAR_LUT[codes]
        if sym.size and sym.min() < 0:
            bad = text[int(np.argmin(sym))]
            raise ValueError(f"character {bad!r} is outside the text inventory")
        return sym

    def decode(self, indices) -> str:
        return "".join(self.index_to_char(int(i)) for i in indices)


_CHAR_LUT = np.full(128, -1, dtype=np.int32)
for _i in range(26):
    _CHAR_LUT[ord("a") + _i] = _i
_CHAR_LUT[ord(" ")] = SPACE

VOCAB = Vocab()
