from .ctc import CtcTarget, ctc_loss, ctc_nll
from .joint import (JointLossBreakdown, encoder_consistency_loss, filtered_consistency_loss, gate_loss,
                    total_loss)

__all__ = ["CtcTarget", "ctc_loss", "ctc_nll", "JointLossBreakdown", "gate_loss",
           "filtered_consistency_loss", "encoder_consistency_loss", "total_loss"]
