#![allow(dead_code)]

use nwtopk::flowtable::{FlowEntry, FlowId, TableConfig};
use nwtopk::protocol::SwitchState;

/// The two-switch example: switch 1 holds f1=2000, f2=500, f5=150; switch 2
/// holds f1=300, f4=600, f3=100. f4 shares f2's vector-0 slot and f3 shares
/// f5's, so f4 displaces f2 while f3 cannot displace f5.
pub struct TwoSwitchExample {
    pub config: TableConfig,
    pub f1: FlowId,
    pub f2: FlowId,
    pub f3: FlowId,
    pub f4: FlowId,
    pub f5: FlowId,
}

impl TwoSwitchExample {
    pub fn new() -> Self {
        let config = TableConfig::new(2, 64, 7).unwrap();
        let h0 = |id: u32| config.hash_index(0, FlowId(id));
        let h1 = |id: u32| config.hash_index(1, FlowId(id));
        let f1 = 1u32;
        let f2 = (2..).find(|&i| h0(i) != h0(f1)).unwrap();
        let f4 = (f2 + 1..)
            .find(|&i| h0(i) == h0(f2) && h1(i) != h1(f2))
            .unwrap();
        let f5 = (2..)
            .find(|&i| ![f1, f2, f4].contains(&i) && ![h0(f1), h0(f2)].contains(&h0(i)))
            .unwrap();
        let f3 = (2..)
            .find(|&i| {
                ![f1, f2, f4, f5].contains(&i)
                    && h0(i) == h0(f5)
                    && ![h1(f2), h1(f5)].contains(&h1(i))
            })
            .unwrap();
        TwoSwitchExample {
            config,
            f1: FlowId(f1),
            f2: FlowId(f2),
            f3: FlowId(f3),
            f4: FlowId(f4),
            f5: FlowId(f5),
        }
    }

    pub fn switches(&self) -> Vec<SwitchState> {
        let contents = [
            vec![(self.f1, 2000), (self.f2, 500), (self.f5, 150)],
            vec![(self.f1, 300), (self.f4, 600), (self.f3, 100)],
        ];
        contents
            .iter()
            .enumerate()
            .map(|(i, entries)| {
                let mut sw = SwitchState::new(i as u16, self.config.clone(), i as u64);
                for &(id, count) in entries {
                    sw.local_mut()
                        .table_mut()
                        .insert_at(0, FlowEntry { id, count });
                }
                sw
            })
            .collect()
    }
}
