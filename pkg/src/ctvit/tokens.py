from __future__ import annotations

from dataclasses import dataclass

from .tensor import Tensor


@dataclass(frozen=True)
class TokenSequence:
    """``[CLS | patch tokens]`` along axis -2; CLS is always index 0.

    ``tokens`` is ``(..., 1 + rows*cols, dim)``; a leading batch axis is allowed.
    """

    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.ndim < 2 or self.tokens.shape[-2] != 1 + rows * cols:
            raise ValueError(
                f"token sequence of shape {self.tokens.shape} does not match grid {self.grid} plus CLS"
            )

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]

    @property
    def cls(self) -> Tensor:
        return self.tokens[..., :1, :]

    @property
    def patches(self) -> Tensor:
        return self.tokens[..., 1:, :]

    def replace(self, tokens: Tensor) -> TokenSequence:
        return TokenSequence(tokens, self.grid)
