//! Training objectives: contrastive, prototype, graph and pseudo-label
//! losses on the tape, the prototype bank, the dual-filter pseudo-labeler
//! and the ramped total.

mod losses;
mod prototypes;
mod pseudo;
mod total;

pub use losses::{
    loss_consistency, loss_contrastive, loss_graph_smooth, loss_neighbor_contrast, loss_proto, loss_pseudo,
    proto_logits, proto_probs, Term,
};
pub use prototypes::{argmax, update_prototypes, PrototypeBank, PROTOTYPE_PARAM};
pub use pseudo::{fuse, pseudo_label, PseudoLabel, PseudoLabelBatch, PseudoLabelConfig};
pub use total::{loss_total, ramp_weight, LossComponents, LossReport, LossWeights};
