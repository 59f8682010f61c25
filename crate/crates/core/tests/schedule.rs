use proptest::prelude::*;

use tddsim::domain::NodeId;
use tddsim::schedule::{
    expand_sp, next_basic_tx_slot, BeaconLayout, Direction, SlotCategory, TddSlotSchedule, TddSlotStructure,
};
use tddsim::Error;

fn schedule_strategy() -> impl Strategy<Value = TddSlotSchedule> {
    prop::collection::btree_map(0usize..24, (0usize..3, any::<bool>()), 0..24).prop_map(|m| {
        let mut s = TddSlotSchedule::new(1, "ap".into());
        for (slot, (sta, up)) in m {
            s.assign(slot, NodeId::new(format!("s{sta}")), if up { Direction::Uplink } else { Direction::Downlink });
        }
        s
    })
}

proptest! {
    /// The returned ack slot is the argmin by brute-force scan.
    #[test]
    fn next_basic_tx_slot_is_the_earliest(schedule in schedule_strategy(), sta in 0usize..3, after in 0u64..26_000) {
        let layout = BeaconLayout::default();
        let structure = TddSlotStructure::default_layout(1);
        let slots = expand_sp(&layout.sp_entry(1, 0), &structure, &schedule).unwrap();
        let node = NodeId::new(format!("s{sta}"));
        let brute = slots
            .iter()
            .filter(|s| s.start_us > after && s.category == SlotCategory::Basic)
            .filter(|s| s.assignee.as_ref() == Some(&node) && s.direction == Some(Direction::Uplink))
            .min_by_key(|s| s.start_us);
        match (next_basic_tx_slot(&slots, &node, after), brute) {
            (Ok(got), Some(want)) => prop_assert_eq!(got, want),
            (Err(Error::NoOpportunity { .. }), None) => {}
            (got, want) => prop_assert!(false, "got {:?}, want {:?}", got, want),
        }
    }

    /// Ack latency never exceeds one interval when the STA holds a BASIC
    /// transmit slot every interval.
    #[test]
    fn ack_wait_is_at_most_one_interval(t in 0u64..(25_600 - 1_600)) {
        let layout = BeaconLayout::default();
        let structure = TddSlotStructure::default_layout(1);
        let mut schedule = TddSlotSchedule::new(1, "ap".into());
        schedule.assign(12, "s0".into(), Direction::Uplink);
        let slots = expand_sp(&layout.sp_entry(1, 0), &structure, &schedule).unwrap();
        let s = next_basic_tx_slot(&slots, &"s0".into(), t).unwrap();
        prop_assert!(s.start_us - t <= structure.interval_duration_us);
    }
}
