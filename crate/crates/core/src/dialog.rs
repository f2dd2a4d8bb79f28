use serde::{Deserialize, Serialize};

use crate::segment::Turn;

/// Maximum silence (ms) between two turns of the same dialog.
pub const DIALOG_GAP_MS: u64 = 5000;

/// Ordered turns of one conversation. Turn `i` is spoken by speaker `i % 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub doc_id: String,
    pub dialog_index: usize,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.text.as_str())
    }

    pub fn last_utterance(&self) -> Option<&str> {
        self.turns.last().map(|t| t.text.as_str())
    }
}

/// Cuts a document's turn stream wherever the silence between one turn's end
/// and the next turn's start exceeds five seconds. Pairs with a missing
/// timestamp are never cut.
pub fn split_into_dialogs(doc_id: &str, turns: Vec<Turn>) -> Vec<Dialog> {
    let mut dialogs = Vec::new();
    let mut current: Vec<Turn> = Vec::new();
    for turn in turns {
        if let Some(prev) = current.last() {
            let cut = match (prev.end_ms, turn.start_ms) {
                (Some(end), Some(start)) => start > end && start - end > DIALOG_GAP_MS,
                _ => false,
            };
            if cut {
                dialogs.push(Dialog {
                    doc_id: doc_id.to_string(),
                    dialog_index: dialogs.len(),
                    turns: std::mem::take(&mut current),
                });
            }
        }
        current.push(turn);
    }
    if !current.is_empty() {
        dialogs.push(Dialog {
            doc_id: doc_id.to_string(),
            dialog_index: dialogs.len(),
            turns: current,
        });
    }
    dialogs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn turn(start: Option<u64>, end: Option<u64>) -> Turn {
        Turn {
            text: "x y".into(),
            start_ms: start,
            end_ms: end,
        }
    }

    #[test]
    fn gap_boundaries() {
        let two = split_into_dialogs("d", vec![turn(Some(0), Some(1000)), turn(Some(6001), Some(7000))]);
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].dialog_index, 1);
        let one = split_into_dialogs("d", vec![turn(Some(0), Some(1000)), turn(Some(6000), Some(7000))]);
        assert_eq!(one.len(), 1);
        let missing = split_into_dialogs("d", vec![turn(Some(0), Some(1000)), turn(None, Some(90_000))]);
        assert_eq!(missing.len(), 1);
        assert!(split_into_dialogs("d", vec![]).is_empty());
    }

    proptest! {
        #[test]
        fn every_turn_kept_once(gaps in proptest::collection::vec(proptest::option::of(0u64..12_000), 0..40)) {
            let mut t = 0u64;
            let turns: Vec<Turn> = gaps
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    t += g.unwrap_or(0);
                    let tt = Turn { text: format!("turn {i}"), start_ms: g.map(|_| t), end_ms: g.map(|_| t + 500) };
                    t += 500;
                    tt
                })
                .collect();
            let dialogs = split_into_dialogs("d", turns.clone());
            let flat: Vec<Turn> = dialogs.into_iter().flat_map(|d| d.turns).collect();
            prop_assert_eq!(flat, turns);
        }
    }
}
