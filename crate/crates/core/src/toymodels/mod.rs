//! Desk-scale stand-ins for the classifier, attacks and data sources.

pub mod attacks;
pub mod classifier;
pub mod generators;

pub use attacks::{attack_batch, attack_restarts, fgsm, pgd, pgd_from, pgd_random_start, AttackConfig, AttackKind};
pub use classifier::{train_toy_classifier, ClassifierConfig, ClassifierGrads, LossGrad, ToyClassifier};
pub use generators::{gen_dependent_h0, gen_non_iid, gen_synthetic, NonIidFlavor, SyntheticKind, VARIANTS_PER_POINT};
