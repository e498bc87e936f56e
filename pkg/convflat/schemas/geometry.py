from pydantic import BaseModel, ConfigDict, Field, model_validator

from convflat.core.exceptions import GeometryError


class ConvSpec(BaseModel):
    """Immutable geometry of the final conv block (stride + zero padding only)."""

    c_in: int = Field(..., ge=1)
    c_out: int = Field(..., ge=1)
    k_h: int = Field(..., ge=1)
    k_w: int = Field(..., ge=1)
    stride: int = Field(1, ge=1)
    padding: int = Field(0, ge=0)
    h: int = Field(..., ge=1)
    w: int = Field(..., ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def check_output_extent(self) -> "ConvSpec":
        if self.h + 2 * self.padding < self.k_h or self.w + 2 * self.padding < self.k_w:
            raise GeometryError(
                f"Kernel {self.k_h}x{self.k_w} larger than padded input "
                f"{self.h + 2 * self.padding}x{self.w + 2 * self.padding}"
            )
        return self

    @classmethod
    def square(
        cls, c_in: int, c_out: int, hw: int, ksize: int, stride: int = 1, padding: int = 0
    ) -> "ConvSpec":
        return cls(
            c_in=c_in, c_out=c_out, k_h=ksize, k_w=ksize,
            stride=stride, padding=padding, h=hw, w=hw,
        )

    @property
    def out_h(self) -> int:
        return (self.h + 2 * self.padding - self.k_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.w + 2 * self.padding - self.k_w) // self.stride + 1

    @property
    def patch_count(self) -> int:
        """R = H' * W', patches per channel."""
        return self.out_h * self.out_w

    @property
    def d_c(self) -> int:
        """Patch dimension per channel."""
        return self.k_h * self.k_w

    @property
    def d(self) -> int:
        """Flattened filter dimension c_in * k_h * k_w."""
        return self.c_in * self.d_c

    @property
    def param_count(self) -> int:
        return self.c_out * self.d

    def with_classes(self, c_out: int) -> "ConvSpec":
        return ConvSpec(**{**self.model_dump(), "c_out": c_out})
