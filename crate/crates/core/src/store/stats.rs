use serde::{Deserialize, Serialize};

use crate::datamodel::{BehaviorEvent, BehaviorType};
use crate::error::{DginError, Result};

/// Sentinel for `avg_purchase_cents` when a group holds no purchase.
pub const NO_PURCHASE: f64 = -1.0;

/// Per-group statistical attributes, summarizing the group's full history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub total_behaviors: u64,
    pub distinct_types: u32,
    pub per_type_counts: [u64; BehaviorType::COUNT],
    pub avg_dwell_seconds: f64,
    pub avg_purchase_cents: f64,
    /// Category-key mode only.
    pub distinct_item_count: Option<u64>,
    /// Category-key mode only.
    pub total_item_count: Option<u64>,
}

impl GroupStats {
    pub fn purchases(&self) -> u64 {
        self.per_type_counts[BehaviorType::Purchase.ordinal()]
    }

    /// Folds one more event into the running statistics.
    ///
    /// `new_distinct_items` is the group's distinct-item count after the event,
    /// supplied by the caller in category-key mode.
    pub fn absorb(&mut self, e: &BehaviorEvent, new_distinct_items: Option<u64>) {
        let n = self.total_behaviors as f64;
        self.avg_dwell_seconds = (self.avg_dwell_seconds * n + e.dwell_seconds as f64) / (n + 1.0);
        if e.behavior_type == BehaviorType::Purchase {
            let np = self.purchases() as f64;
            let prev = if np == 0.0 { 0.0 } else { self.avg_purchase_cents };
            self.avg_purchase_cents = (prev * np + e.price_cents as f64) / (np + 1.0);
        }
        self.total_behaviors += 1;
        let slot = &mut self.per_type_counts[e.behavior_type.ordinal()];
        if *slot == 0 {
            self.distinct_types += 1;
        }
        *slot += 1;
        if let Some(d) = new_distinct_items {
            self.distinct_item_count = Some(d);
            self.total_item_count = Some(self.total_behaviors);
        }
    }
}

/// Statistics recomputed from a group's complete member list.
pub fn compute_stats(members: &[BehaviorEvent], category_mode: bool) -> Result<GroupStats> {
    if members.is_empty() {
        return Err(DginError::Precondition(
            "compute_stats needs at least one member".into(),
        ));
    }
    let mut per_type = [0u64; BehaviorType::COUNT];
    let mut dwell_sum = 0u64;
    let mut purchase_sum = 0u64;
    for m in members {
        per_type[m.behavior_type.ordinal()] += 1;
        dwell_sum += m.dwell_seconds;
        if m.behavior_type == BehaviorType::Purchase {
            purchase_sum += m.price_cents;
        }
    }
    let total = members.len() as u64;
    let purchases = per_type[BehaviorType::Purchase.ordinal()];
    let (distinct_item_count, total_item_count) = if category_mode {
        let items: std::collections::BTreeSet<_> = members.iter().map(|m| m.item_id).collect();
        (Some(items.len() as u64), Some(total))
    } else {
        (None, None)
    };
    Ok(GroupStats {
        total_behaviors: total,
        distinct_types: per_type.iter().filter(|&&c| c > 0).count() as u32,
        per_type_counts: per_type,
        avg_dwell_seconds: dwell_sum as f64 / total as f64,
        avg_purchase_cents: if purchases == 0 {
            NO_PURCHASE
        } else {
            purchase_sum as f64 / purchases as f64
        },
        distinct_item_count,
        total_item_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: BehaviorType, price: u64, dwell: u64) -> BehaviorEvent {
        BehaviorEvent {
            item_id: 1,
            category_id: 1,
            price_cents: price,
            timestamp: 100,
            location_cell: 1,
            behavior_type: t,
            dwell_seconds: dwell,
        }
    }

    #[test]
    fn mixed_group_counts() {
        use BehaviorType::*;
        let s = compute_stats(
            &[
                ev(Click, 0, 0),
                ev(Click, 0, 0),
                ev(Purchase, 2000, 30),
                ev(BrowseDishes, 0, 10),
            ],
            false,
        )
        .unwrap();
        assert_eq!(s.total_behaviors, 4);
        assert_eq!(s.distinct_types, 3);
        assert_eq!(s.per_type_counts, [2, 0, 0, 1, 0, 1]);
        assert_eq!(s.avg_dwell_seconds, 10.0);
        assert_eq!(s.avg_purchase_cents, 2000.0);
        assert_eq!(s.distinct_item_count, None);
    }

    #[test]
    fn single_click() {
        let s = compute_stats(&[ev(BehaviorType::Click, 0, 7)], false).unwrap();
        assert_eq!(s.total_behaviors, 1);
        assert_eq!(s.avg_dwell_seconds, 7.0);
        assert_eq!(s.avg_purchase_cents, NO_PURCHASE);
    }

    #[test]
    fn empty_members_is_precondition_error() {
        assert!(matches!(compute_stats(&[], false), Err(DginError::Precondition(_))));
    }

    #[test]
    fn absorb_matches_recount() {
        use BehaviorType::*;
        let evs = [
            ev(Purchase, 500, 3),
            ev(Click, 0, 9),
            ev(Purchase, 1500, 0),
            ev(ViewComments, 0, 40),
        ];
        let mut s = compute_stats(&evs[..1], false).unwrap();
        for e in &evs[1..] {
            s.absorb(e, None);
        }
        let full = compute_stats(&evs, false).unwrap();
        assert_eq!(s.per_type_counts, full.per_type_counts);
        assert_eq!(s.distinct_types, full.distinct_types);
        assert!((s.avg_dwell_seconds - full.avg_dwell_seconds).abs() < 1e-12);
        assert!((s.avg_purchase_cents - full.avg_purchase_cents).abs() < 1e-12);
    }
}
