//! A small reinforcement-learning playground where a token-level policy
//! learns to answer questions by searching a document collection: episodes
//! interleave free generation with tagged search calls whose results are
//! spliced back into the sequence, and only the tokens the policy itself
//! produced are optimized.
//!
//! The crate is organized bottom-up: [`vocab`] and [`retrieval`] define the
//! world interface, [`model`] the networks, [`rollout`] the episode loop,
//! [`rl`] the losses, [`world`] a synthetic fact world to train against,
//! and [`train`] the orchestration (config, checkpoints, metrics,
//! evaluation). Everything numeric is generic over [`Scalar`]; the `F64*`
//! aliases pin the default precision.

pub mod config;
pub mod error;
pub mod model;
pub mod retrieval;
pub mod reward;
pub mod rl;
pub mod rollout;
pub mod scalar;
pub mod train;
pub mod vocab;
pub mod world;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use model::{context_window, AdamState, PolicyParams, TokenMlp, ValueParams};
pub use retrieval::{CorpusIndex, Document, RetrievedDoc};
pub use reward::{em_reward, extract_answer, normalize_answer, MetricsRow, METRICS_COLUMNS};
pub use rl::{
    gae, grpo_advantages, grpo_loss, kl_exact, optimized_positions, ppo_loss, AdvantageSet,
    BehaviorSnapshot, HyperParams, LossOutput, SequenceExample,
};
pub use rollout::{
    build_prompt, loss_mask, rollout, ActionPolicy, Provenance, RolloutRecord, RolloutSettings,
    SamplingPolicy, ScriptedPolicy, TaggedSequence, Termination,
};
pub use scalar::Scalar;
pub use train::{
    evaluate, export_metrics_csv, inspect, load_checkpoint, read_metrics, save_checkpoint,
    Checkpoint, EvalItem, EvalReport, InspectReport, InspectToken, Trainer, CHECKPOINT_VERSION,
    METRICS_FILE,
};
pub use vocab::{Special, TokenId, Vocab};
pub use world::{
    gen_world, load_corpus, load_qa, load_vocab, oracle_solve, scripted_expert, world_vocab,
    write_world, FactWorld, QAItem,
};

/// Default-precision trainer.
pub type F64Trainer = Trainer<f64>;
/// Default-precision policy network.
pub type F64Policy = PolicyParams<f64>;
/// Default-precision value network.
pub type F64Value = ValueParams<f64>;
/// Default-precision checkpoint.
pub type F64Checkpoint = Checkpoint<f64>;
