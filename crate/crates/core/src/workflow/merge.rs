use std::collections::BTreeMap;

use crate::protocol::AnomalyVerdict;

pub const DEFAULT_MERGE_GAP: usize = 3;

/// Merges same-type verdicts that overlap or sit at most `gap` indices
/// apart (`next.start - end <= gap`) into their hull. The merged verdict
/// keeps the highest confidence and joins the explanations. Verdicts of
/// different types never merge. Output is sorted by interval, then type.
pub fn merge_verdicts(verdicts: &[AnomalyVerdict], gap: usize) -> Vec<AnomalyVerdict> {
    let mut by_type: BTreeMap<&str, Vec<&AnomalyVerdict>> = BTreeMap::new();
    for v in verdicts {
        by_type.entry(v.kind.as_str()).or_default().push(v);
    }
    let mut out: Vec<AnomalyVerdict> = Vec::with_capacity(verdicts.len());
    for (_, mut group) in by_type {
        group.sort_by_key(|v| v.interval);
        let mut current: Option<AnomalyVerdict> = None;
        for v in group {
            match current.as_mut() {
                Some(c) if v.start() <= c.end().saturating_add(gap) => {
                    c.interval[1] = c.end().max(v.end());
                    c.confidence = c.confidence.max(v.confidence);
                    if !v.explanation.is_empty() && v.explanation != c.explanation {
                        if !c.explanation.is_empty() {
                            c.explanation.push(' ');
                        }
                        c.explanation.push_str(&v.explanation);
                    }
                }
                _ => out.extend(current.replace(v.clone())),
            }
        }
        out.extend(current);
    }
    out.sort_by(|a, b| a.interval.cmp(&b.interval).then_with(|| a.kind.cmp(&b.kind)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(s: usize, e: usize, kind: &str, c: u8) -> AnomalyVerdict {
        AnomalyVerdict {
            interval: [s, e],
            kind: kind.into(),
            explanation: format!("{kind}@{s}"),
            confidence: c,
        }
    }

    #[test]
    fn gap_close_merges() {
        let m = merge_verdicts(&[v(10, 20, "t", 1), v(22, 30, "t", 3)], 3);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].interval, [10, 30]);
        assert_eq!(m[0].confidence, 3);
        assert_eq!(m[0].explanation, "t@10 t@22");
    }

    #[test]
    fn distant_and_cross_type_kept() {
        let far = [v(10, 20, "t", 1), v(40, 50, "t", 1)];
        assert_eq!(merge_verdicts(&far, 3), far.to_vec());
        let cross = [v(10, 20, "a", 1), v(15, 25, "b", 2)];
        assert_eq!(merge_verdicts(&cross, 3), cross.to_vec());
    }

    #[test]
    fn edge_of_gap() {
        assert_eq!(merge_verdicts(&[v(0, 5, "t", 1), v(8, 9, "t", 1)], 3).len(), 1);
        assert_eq!(merge_verdicts(&[v(0, 5, "t", 1), v(9, 9, "t", 1)], 3).len(), 2);
    }

    proptest! {
        #[test]
        fn output_is_sorted_and_disjoint_per_type(
            items in prop::collection::vec((0usize..100, 0usize..10, 0usize..3, 1u8..=3), 0..20),
        ) {
            let kinds = ["a", "b", "c"];
            let input: Vec<AnomalyVerdict> =
                items.iter().map(|&(s, l, k, c)| v(s, s + l, kinds[k], c)).collect();
            let out = merge_verdicts(&input, 3);
            for pair in out.windows(2) {
                prop_assert!(pair[0].interval <= pair[1].interval);
            }
            for k in kinds {
                let same: Vec<_> = out.iter().filter(|x| x.kind == k).collect();
                for pair in same.windows(2) {
                    prop_assert!(pair[1].start() > pair[0].end() + 3);
                }
            }
            // Coverage per type is preserved or grown, never lost.
            for x in &input {
                prop_assert!(out.iter().any(|o| o.kind == x.kind
                    && o.start() <= x.start() && x.end() <= o.end()));
            }
        }
    }
}
