from .conformer import ConformerBlock, ConformerCtc, EncoderOutput, subsampled_length, subsampled_lengths
from .mcg import ConvBlock, ConvBlockSpec, McgFrontEnd, McgOutput, apply_gates, mcg_forward

__all__ = ["ConformerBlock", "ConformerCtc", "EncoderOutput", "subsampled_length", "subsampled_lengths",
           "ConvBlock", "ConvBlockSpec", "McgFrontEnd", "McgOutput", "apply_gates", "mcg_forward"]
