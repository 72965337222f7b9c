use std::collections::BTreeMap;
use std::sync::Mutex;

use super::UsageStats;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EndpointTotals {
    pub calls: u64,
    pub cached_calls: u64,
    pub usage: UsageStats,
}

/// Running usage totals per endpoint. Safe to append from many tasks.
#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<BTreeMap<String, EndpointTotals>>,
}

impl UsageLedger {
    pub fn record(&self, endpoint: &str, usage: &UsageStats, cached: bool) {
        let mut entries = self.entries.lock().expect("ledger lock poisoned");
        let totals = entries.entry(endpoint.to_owned()).or_default();
        totals.calls += 1;
        if cached {
            totals.cached_calls += 1;
        }
        totals.usage.add(usage);
    }

    pub fn by_endpoint(&self) -> BTreeMap<String, EndpointTotals> {
        self.entries.lock().expect("ledger lock poisoned").clone()
    }

    pub fn total(&self) -> UsageStats {
        self.by_endpoint().values().map(|t| &t.usage).sum()
    }

    pub fn calls(&self) -> u64 {
        self.by_endpoint().values().map(|t| t.calls).sum()
    }

    pub fn cached_calls(&self) -> u64 {
        self.by_endpoint().values().map(|t| t.cached_calls).sum()
    }
}
