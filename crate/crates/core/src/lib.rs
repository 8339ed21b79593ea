//! Hallucination span annotation by an ensemble of role-conditioned LLM
//! annotators, with vote aggregation into soft and hard labels and the
//! IoU / Spearman scorer used to evaluate them.
//!
//! Vote proportions and metrics are generic over the scalar type
//! ([`Probability`] for proportions, [`num_traits::Float`] for metrics). The
//! aliases below fix the common choices.

pub mod aggregate;
pub mod knowledge;
pub mod llm;
pub mod marker;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod scalar;
pub mod scorer;

pub use aggregate::{aggregate, to_hard_labels, to_soft_labels, AggregationError, AnnotationRun, RunSet};
pub use knowledge::{KnowledgeBundle, KnowledgeService};
pub use llm::{CompletionRequest, LlmGateway, ProviderConfig};
pub use marker::{align, parse_marked, project_spans, validate_run, AlignmentResult, MarkerError, ParsedMarking};
pub use model::{CharProbVector, GoldRecord, PredictionRecord, QAItem, SpanLabel};
pub use pipeline::{Annotator, PipelineConfig};
pub use scalar::Probability;
pub use scorer::{evaluate, expand_soft, iou, spearman, EvalReport};

/// Exact vote proportions.
pub type Rational = num_rational::Ratio<i64>;

/// Per-character probabilities in double precision; the pipeline default.
pub type CharProbs = CharProbVector<f64>;
/// Per-character probabilities in single precision.
pub type CharProbsF32 = CharProbVector<f32>;
/// Per-character probabilities as exact fractions of the valid run count.
pub type ExactCharProbs = CharProbVector<Rational>;

pub type SoftLabel = SpanLabel<f64>;
pub type ExactSoftLabel = SpanLabel<Rational>;
