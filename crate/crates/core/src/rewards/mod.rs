//! Reply parsing and the reward stack: format reward, task-specific legal
//! rewards, the dual-mode logit differential and its modulation.

mod infogain;
pub(crate) mod legal;
mod parse;

pub use infogain::{
    decomposition_check, delta_q, delta_q_from_contexts, info_reward, score_trajectory, Decomposition, DeltaQ,
    InfoGainConfig, RewardBreakdown, RewardMode,
};
pub use legal::{distance_reward, f1_score, first_number, legal_reward, parse_label_set, DistanceRewardConfig};
pub use parse::{format_reward, parse_structured_output, FormatFlags, StructuredOutput};
