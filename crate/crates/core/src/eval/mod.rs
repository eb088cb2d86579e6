//! Metrics, confusion matrices, the k-NN baseline, MAC accounting and the
//! ablation and augmentation experiments.

mod complexity;
mod experiments;
mod metrics;

pub use complexity::{
    classifier_macs, complexity_report, discriminator_macs, generator_macs, instrumented_classifier_macs,
    instrumented_discriminator_macs, instrumented_generator_macs, mac_count_discriminator, mac_count_generator,
    ComplexityReport, DiscriminatorMacs, GeneratorMacs,
};
pub use experiments::{
    ablation_run, augmentation_experiment, desk_split, AblationRow, AblationTable, AugmentationReport,
    AugmentationTrial, Variant,
};
pub use metrics::{
    confusion_matrix, evaluate_discriminator, evaluate_mil, knn_baseline, metrics, ClassMetrics, ConfusionMatrix,
    MetricsReport,
};
