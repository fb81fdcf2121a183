use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CognitiveState {
    Exploration,
    TargetVerification,
    TargetApproaching,
    CheckReadyToAnswer,
}

impl CognitiveState {
    pub const ALL: [CognitiveState; 4] = [
        CognitiveState::Exploration,
        CognitiveState::TargetVerification,
        CognitiveState::TargetApproaching,
        CognitiveState::CheckReadyToAnswer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CognitiveState::Exploration => "Exploration",
            CognitiveState::TargetVerification => "TargetVerification",
            CognitiveState::TargetApproaching => "TargetApproaching",
            CognitiveState::CheckReadyToAnswer => "CheckReadyToAnswer",
        }
    }
}

impl fmt::Display for CognitiveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Facts observed during a step that may move the agent to another state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signals {
    pub target_candidate_found: bool,
    /// `Some(true)` confirmed, `Some(false)` rejected, `None` undecided.
    pub target_confirmed: Option<bool>,
    pub at_target: bool,
    /// `Some(false)` sends the agent back to exploring.
    pub ready_to_answer: Option<bool>,
    pub budget_exhausted: bool,
}

/// The state update. Total: signals that do not fire an edge leave the state as is.
pub fn transition(state: CognitiveState, s: Signals) -> CognitiveState {
    use CognitiveState::*;
    if s.budget_exhausted {
        return CheckReadyToAnswer;
    }
    match state {
        Exploration if s.target_candidate_found => TargetVerification,
        TargetVerification => match s.target_confirmed {
            Some(true) => TargetApproaching,
            Some(false) => Exploration,
            None => TargetVerification,
        },
        TargetApproaching if s.at_target => CheckReadyToAnswer,
        CheckReadyToAnswer if s.ready_to_answer == Some(false) => Exploration,
        other => other,
    }
}

/// Whether `from -> to` is one of the enumerated edges. Staying put is legal.
pub fn is_legal_edge(from: CognitiveState, to: CognitiveState) -> bool {
    use CognitiveState::*;
    from == to
        || to == CheckReadyToAnswer
        || matches!(
            (from, to),
            (Exploration, TargetVerification)
                | (TargetVerification, TargetApproaching)
                | (TargetVerification, Exploration)
                | (CheckReadyToAnswer, Exploration)
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use CognitiveState::*;

    #[test]
    fn defined_edges() {
        let found = Signals {
            target_candidate_found: true,
            ..Default::default()
        };
        assert_eq!(transition(Exploration, found), TargetVerification);
        let rejected = Signals {
            target_confirmed: Some(false),
            ..Default::default()
        };
        assert_eq!(transition(TargetVerification, rejected), Exploration);
        let confirmed = Signals {
            target_confirmed: Some(true),
            ..Default::default()
        };
        assert_eq!(transition(TargetVerification, confirmed), TargetApproaching);
        let arrived = Signals {
            at_target: true,
            ..Default::default()
        };
        assert_eq!(transition(TargetApproaching, arrived), CheckReadyToAnswer);
        let not_ready = Signals {
            ready_to_answer: Some(false),
            ..Default::default()
        };
        assert_eq!(transition(CheckReadyToAnswer, not_ready), Exploration);
    }

    #[test]
    fn budget_forces_answer_check() {
        let s = Signals {
            budget_exhausted: true,
            target_candidate_found: true,
            ..Default::default()
        };
        for st in CognitiveState::ALL {
            assert_eq!(transition(st, s), CheckReadyToAnswer);
        }
    }

    #[test]
    fn illegal_edges() {
        assert!(!is_legal_edge(Exploration, TargetApproaching));
        assert!(!is_legal_edge(TargetApproaching, Exploration));
        assert!(!is_legal_edge(CheckReadyToAnswer, TargetVerification));
    }

    fn signals() -> impl Strategy<Value = Signals> {
        (
            any::<bool>(),
            prop::option::of(any::<bool>()),
            any::<bool>(),
            prop::option::of(any::<bool>()),
            any::<bool>(),
        )
            .prop_map(|(a, b, c, d, e)| Signals {
                target_candidate_found: a,
                target_confirmed: b,
                at_target: c,
                ready_to_answer: d,
                budget_exhausted: e,
            })
    }

    proptest! {
        #[test]
        fn transitions_are_legal(i in 0usize..4, s in signals()) {
            let from = CognitiveState::ALL[i];
            prop_assert!(is_legal_edge(from, transition(from, s)));
        }
    }
}
