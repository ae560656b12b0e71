use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Icl,
    ReflectUnseen,
    ReflectFn,
    ReflectBoundary,
    Embedding,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Icl,
        Phase::ReflectUnseen,
        Phase::ReflectFn,
        Phase::ReflectBoundary,
        Phase::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Icl => "icl",
            Phase::ReflectUnseen => "reflect-unseen",
            Phase::ReflectFn => "reflect-fn",
            Phase::ReflectBoundary => "reflect-boundary",
            Phase::Embedding => "embedding",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Calls whose token counts were estimated locally.
    pub estimated_calls: u64,
}

impl PhaseUsage {
    fn add(&mut self, u: Usage) {
        self.calls += 1;
        self.input_tokens += u.input_tokens;
        self.output_tokens += u.output_tokens;
        if u.estimated {
            self.estimated_calls += 1;
        }
    }

    fn merge(&mut self, other: &PhaseUsage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.estimated_calls += other.estimated_calls;
    }
}

/// Thread-safe cumulative token counts per phase.
#[derive(Debug, Default)]
pub struct UsageLedger {
    slots: Mutex<[PhaseUsage; 5]>,
}

impl UsageLedger {
    pub fn record(&self, phase: Phase, usage: Usage) {
        self.slots.lock().expect("ledger lock")[phase.slot()].add(usage);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        let slots = *self.slots.lock().expect("ledger lock");
        UsageSnapshot {
            phases: Phase::ALL.iter().map(|&p| (p, slots[p.slot()])).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub phases: Vec<(Phase, PhaseUsage)>,
}

impl UsageSnapshot {
    pub fn phase(&self, phase: Phase) -> PhaseUsage {
        self.phases
            .iter()
            .find(|(p, _)| *p == phase)
            .map(|(_, u)| *u)
            .unwrap_or_default()
    }

    pub fn total(&self) -> PhaseUsage {
        let mut t = PhaseUsage::default();
        for (_, u) in &self.phases {
            t.merge(u);
        }
        t
    }
}

/// Dollar prices per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prices {
    pub input_per_million: f64,
    pub output_per_million: f64,
    /// Embedding calls are billed at this input rate instead.
    pub embedding_per_million: f64,
}

impl Default for Prices {
    fn default() -> Self {
        Prices {
            input_per_million: 2.50,
            output_per_million: 10.00,
            embedding_per_million: 0.02,
        }
    }
}

impl Prices {
    pub fn cost(&self, phase: Phase, u: &PhaseUsage) -> f64 {
        let in_rate = match phase {
            Phase::Embedding => self.embedding_per_million,
            _ => self.input_per_million,
        };
        u.input_tokens as f64 * in_rate / 1e6 + u.output_tokens as f64 * self.output_per_million / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub phase: Phase,
    #[serde(flatten)]
    pub usage: PhaseUsage,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub prices: Prices,
    pub phases: Vec<PhaseCost>,
    pub total: PhaseUsage,
    pub total_cost_usd: f64,
}

impl CostReport {
    /// True if any phase relied on estimated token counts.
    pub fn has_estimates(&self) -> bool {
        self.total.estimated_calls > 0
    }

    /// Phase sums equal the totals.
    pub fn reconciles(&self) -> bool {
        let mut t = PhaseUsage::default();
        let mut cost = 0.0;
        for p in &self.phases {
            t.merge(&p.usage);
            cost += p.cost_usd;
        }
        t == self.total && (cost - self.total_cost_usd).abs() <= 1e-9 * cost.abs().max(1.0)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>7} {:>12} {:>12} {:>11}\n",
            "phase", "calls", "input", "output", "cost ($)"
        );
        for p in &self.phases {
            let mark = if p.usage.estimated_calls > 0 { "*" } else { "" };
            out.push_str(&format!(
                "{:<18} {:>7} {:>12} {:>12} {:>11.4}{mark}\n",
                p.phase.as_str(),
                p.usage.calls,
                p.usage.input_tokens,
                p.usage.output_tokens,
                p.cost_usd
            ));
        }
        out.push_str(&format!(
            "{:<18} {:>7} {:>12} {:>12} {:>11.4}\n",
            "total", self.total.calls, self.total.input_tokens, self.total.output_tokens, self.total_cost_usd
        ));
        if self.has_estimates() {
            out.push_str("* token counts partly estimated (4 characters per token)\n");
        }
        out
    }
}

pub fn usage_report(snapshot: &UsageSnapshot, prices: &Prices) -> CostReport {
    let phases: Vec<PhaseCost> = snapshot
        .phases
        .iter()
        .map(|(p, u)| PhaseCost {
            phase: *p,
            usage: *u,
            cost_usd: prices.cost(*p, u),
        })
        .collect();
    let total_cost_usd = phases.iter().map(|p| p.cost_usd).sum();
    CostReport {
        prices: *prices,
        total: snapshot.total(),
        phases,
        total_cost_usd,
    }
}
