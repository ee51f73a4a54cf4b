//! The run stage machine.
//!
//! Stages advance in a fixed order:
//! `Ideation -> InitialTesting -> Refinement(0..=n_test)* -> Documentation -> Done`.
//! `Refinement(k)` is the review that follows the execution of round `k`;
//! round 0 is the initial test, so at most `1 + n_test` rounds execute.
//! `Failed` is reachable from every non-terminal stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Ideation,
    InitialTesting,
    Refinement { round: u32 },
    Documentation,
    Done,
    Failed { reason: String },
}

impl Stage {
    /// Position in the fixed stage order; `Failed` sorts last.
    pub fn rank(&self) -> (u8, u32) {
        match self {
            Stage::Ideation => (0, 0),
            Stage::InitialTesting => (1, 0),
            Stage::Refinement { round } => (2, *round),
            Stage::Documentation => (3, 0),
            Stage::Done => (4, 0),
            Stage::Failed { .. } => (5, 0),
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Stage::Done | Stage::Failed { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Stage::Ideation => "Ideation".into(),
            Stage::InitialTesting => "InitialTesting".into(),
            Stage::Refinement { round } => format!("Refinement({round})"),
            Stage::Documentation => "Documentation".into(),
            Stage::Done => "Done".into(),
            Stage::Failed { reason } => format!("Failed({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageEvent {
    IdeaAccepted,
    /// Round 0 executed successfully.
    InitialTestCompleted,
    /// The refinement pair asked for (and the executor ran) another round.
    FollowUpRequested,
    /// The refinement reflector emitted the termination flag.
    NoFollowUp,
    /// The follow-up budget is spent; no further review is held.
    BudgetExhausted,
    DocumentationCompleted,
    Failure(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal transition: {event:?} in stage {stage}")]
pub struct IllegalTransition {
    pub stage: String,
    pub event: StageEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    #[serde(flatten)]
    pub stage: Stage,
    pub rounds_completed: u32,
    pub n_test: u32,
}

impl RunState {
    pub fn new(n_test: u32) -> Self {
        Self {
            stage: Stage::Ideation,
            rounds_completed: 0,
            n_test,
        }
    }

    pub fn advance(&self, event: StageEvent) -> Result<RunState, IllegalTransition> {
        let illegal = || IllegalTransition {
            stage: self.stage.label(),
            event: event.clone(),
        };
        let mut next = self.clone();
        match (&self.stage, &event) {
            (stage, StageEvent::Failure(reason)) if !stage.is_terminal() => {
                next.stage = Stage::Failed { reason: reason.clone() };
            }
            (Stage::Ideation, StageEvent::IdeaAccepted) => next.stage = Stage::InitialTesting,
            (Stage::InitialTesting, StageEvent::InitialTestCompleted) => {
                next.rounds_completed = 1;
                next.stage = if self.n_test == 0 {
                    Stage::Documentation
                } else {
                    Stage::Refinement { round: 0 }
                };
            }
            (Stage::Refinement { round }, StageEvent::FollowUpRequested) => {
                if *round < self.n_test {
                    next.stage = Stage::Refinement { round: round + 1 };
                    next.rounds_completed = self.rounds_completed + 1;
                } else {
                    next.stage = Stage::Documentation;
                }
            }
            (Stage::Refinement { .. }, StageEvent::NoFollowUp) => next.stage = Stage::Documentation,
            (Stage::Refinement { round }, StageEvent::BudgetExhausted) if *round >= self.n_test => {
                next.stage = Stage::Documentation;
            }
            (Stage::Documentation, StageEvent::DocumentationCompleted) => next.stage = Stage::Done,
            _ => return Err(illegal()),
        }
        Ok(next)
    }

    /// Whether the review after the current round may request another one.
    pub fn budget_remaining(&self) -> bool {
        matches!(self.stage, Stage::Refinement { round } if round < self.n_test)
    }
}
