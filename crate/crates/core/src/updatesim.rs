//! Analytical model of the wearable update path: BLE transfer time,
//! duty-cycled power, battery life, on-chip memory fit and the
//! model-vs-prototype update savings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per KB in memory budgets.
pub const KB: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    LowLatency,
    LowPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    pub frequency_mhz: f64,
    pub active_power_mw: f64,
    #[serde(default)]
    pub idle_power_mw: Option<f64>,
    pub voltage_v: f64,
    pub window_s: f64,
    pub exec_time_s: f64,
    #[serde(default = "default_capacity")]
    pub battery_capacity_mah: f64,
    pub mode: PowerMode,
}

fn default_capacity() -> f64 {
    480.0
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frequency_mhz", self.frequency_mhz),
            ("active_power_mw", self.active_power_mw),
            ("voltage_v", self.voltage_v),
            ("window_s", self.window_s),
            ("exec_time_s", self.exec_time_s),
            ("battery_capacity_mah", self.battery_capacity_mah),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{}: {name} must be positive, got {v}", self.label())));
            }
        }
        match self.mode {
            PowerMode::LowLatency => {
                match self.idle_power_mw {
                    None => {
                        return Err(Error::Config(format!("{}: low-latency mode needs idle_power_mw", self.label())))
                    }
                    Some(p) if !(p >= 0.0 && p.is_finite()) => {
                        return Err(Error::Config(format!("{}: idle_power_mw must be >= 0, got {p}", self.label())))
                    }
                    _ => {}
                }
                if self.exec_time_s > self.window_s {
                    return Err(Error::Config(format!(
                        "{}: exec_time_s {} exceeds window_s {} (not real-time)",
                        self.label(),
                        self.exec_time_s,
                        self.window_s
                    )));
                }
            }
            PowerMode::LowPower => {
                if self.idle_power_mw.is_some() {
                    return Err(Error::Config(format!("{}: low-power mode has no idle power", self.label())));
                }
                if self.exec_time_s != self.window_s {
                    return Err(Error::Config(format!(
                        "{}: low-power mode runs for the whole window (exec_time_s = window_s)",
                        self.label()
                    )));
                }
            }
        }
        Ok(())
    }

    fn label(&self) -> &str {
        if self.name.is_empty() {
            "hardware profile"
        } else {
            &self.name
        }
    }

    pub fn duty_cycle(&self) -> f64 {
        self.exec_time_s / self.window_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    #[serde(default = "default_throughput")]
    pub throughput_bps: f64,
    #[serde(default = "default_efficiency")]
    pub protocol_efficiency: f64,
}

fn default_throughput() -> f64 {
    1_000_000.0
}

fn default_efficiency() -> f64 {
    1.0
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec {
            throughput_bps: default_throughput(),
            protocol_efficiency: default_efficiency(),
        }
    }
}

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.throughput_bps > 0.0 && self.throughput_bps.is_finite()) {
            return Err(Error::Config(format!("throughput_bps must be positive, got {}", self.throughput_bps)));
        }
        if !(self.protocol_efficiency > 0.0 && self.protocol_efficiency <= 1.0) {
            return Err(Error::Config(format!(
                "protocol_efficiency must be in (0,1], got {}",
                self.protocol_efficiency
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Model,
    Prototypes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdatePayload {
    pub bytes: u64,
    pub kind: PayloadKind,
}

impl UpdatePayload {
    pub fn model(bytes: u64) -> Self {
        UpdatePayload {
            bytes,
            kind: PayloadKind::Model,
        }
    }

    pub fn prototypes(bytes: u64) -> Self {
        UpdatePayload {
            bytes,
            kind: PayloadKind::Prototypes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryRegion {
    pub name: String,
    pub bytes: u64,
    #[serde(default)]
    pub overwritable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryBudget {
    #[serde(default = "default_total_kb")]
    pub total_kb: u64,
    #[serde(default = "default_banks")]
    pub banks: u32,
    pub regions: Vec<MemoryRegion>,
}

fn default_total_kb() -> u64 {
    384
}

fn default_banks() -> u32 {
    12
}

impl MemoryBudget {
    /// Input, model, prototypes and the overwritable intermediate buffer.
    pub fn standard(input: u64, model: u64, prototypes: u64, intermediate: u64) -> Self {
        let r = |name: &str, bytes, overwritable| MemoryRegion {
            name: name.into(),
            bytes,
            overwritable,
        };
        MemoryBudget {
            total_kb: default_total_kb(),
            banks: default_banks(),
            regions: vec![
                r("input", input, false),
                r("model", model, false),
                r("prototypes", prototypes, false),
                r("intermediate", intermediate, true),
            ],
        }
    }
}

pub fn transfer_time(payload: &UpdatePayload, link: &LinkSpec) -> Result<f64> {
    link.validate()?;
    Ok(payload.bytes as f64 * 8.0 / (link.throughput_bps * link.protocol_efficiency))
}

/// Mean power over a window in mW.
pub fn avg_power(profile: &HardwareProfile) -> Result<f64> {
    profile.validate()?;
    Ok(match profile.mode {
        PowerMode::LowPower => profile.active_power_mw,
        PowerMode::LowLatency => {
            let d = profile.duty_cycle();
            let idle = profile.idle_power_mw.unwrap_or(0.0);
            profile.active_power_mw * d + idle * (1.0 - d)
        }
    })
}

/// `capacity_mah × voltage_v / avg_power_mw`.
pub fn battery_life_hours(profile: &HardwareProfile) -> Result<f64> {
    let p = avg_power(profile)?;
    if !(p > 0.0) {
        return Err(Error::Config("average power is zero".into()));
    }
    Ok(profile.battery_capacity_mah * profile.voltage_v / p)
}

pub fn update_savings_ratio(model: &UpdatePayload, prototypes: &UpdatePayload) -> Result<f64> {
    if prototypes.bytes == 0 {
        return Err(Error::Input("prototype payload is empty".into()));
    }
    Ok(model.bytes as f64 / prototypes.bytes as f64)
}

pub fn update_overhead_fraction(payload: &UpdatePayload, link: &LinkSpec, profile: &HardwareProfile) -> Result<f64> {
    if !(profile.exec_time_s > 0.0) {
        return Err(Error::Config("exec_time_s must be positive".into()));
    }
    Ok(transfer_time(payload, link)? / profile.exec_time_s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionUse {
    pub name: String,
    pub bytes: u64,
    pub kb: f64,
    pub overwritable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    pub fits: bool,
    pub total_bytes: u64,
    pub used_bytes: u64,
    /// Negative when over budget.
    pub slack_bytes: i64,
    pub banks: u32,
    pub bank_bytes: u64,
    /// Whole banks the regions would occupy if each started on a bank
    /// boundary; informational only.
    pub banks_if_aligned: u64,
    pub regions: Vec<RegionUse>,
}

impl MemoryReport {
    pub fn listing(&self) -> String {
        self.regions
            .iter()
            .map(|r| format!("{}={} B", r.name, r.bytes))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn memory_report(budget: &MemoryBudget) -> MemoryReport {
    let total_bytes = budget.total_kb * KB;
    let used_bytes: u64 = budget.regions.iter().map(|r| r.bytes).sum();
    let bank_bytes = if budget.banks == 0 { 0 } else { total_bytes / budget.banks as u64 };
    let banks_if_aligned = if bank_bytes == 0 {
        0
    } else {
        budget.regions.iter().map(|r| r.bytes.div_ceil(bank_bytes)).sum()
    };
    MemoryReport {
        fits: used_bytes <= total_bytes,
        total_bytes,
        used_bytes,
        slack_bytes: total_bytes as i64 - used_bytes as i64,
        banks: budget.banks,
        bank_bytes,
        banks_if_aligned,
        regions: budget
            .regions
            .iter()
            .map(|r| RegionUse {
                name: r.name.clone(),
                bytes: r.bytes,
                kb: r.bytes as f64 / KB as f64,
                overwritable: r.overwritable,
            })
            .collect(),
    }
}

/// Fit report, or a configuration error naming every region when the sum
/// exceeds the budget.
pub fn check_memory(budget: &MemoryBudget) -> Result<MemoryReport> {
    let report = memory_report(budget);
    if !report.fits {
        return Err(Error::Config(format!(
            "memory over budget: {} B used of {} B ({} B over); regions: {}",
            report.used_bytes,
            report.total_bytes,
            -report.slack_bytes,
            report.listing()
        )));
    }
    Ok(report)
}

/// Hardware constants and payload sizes of one application.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub low_latency: HardwareProfile,
    pub low_power: HardwareProfile,
    pub model: UpdatePayload,
    pub prototypes: UpdatePayload,
    pub memory: MemoryBudget,
}

pub const PRESET_NAMES: [&str; 2] = ["epilepsy", "af"];

#[allow(clippy::too_many_arguments)]
fn profile(name: String, mode: PowerMode, mhz: f64, active: f64, idle: Option<f64>, v: f64, window: f64, exec: f64) -> HardwareProfile {
    HardwareProfile {
        name,
        frequency_mhz: mhz,
        active_power_mw: active,
        idle_power_mw: idle,
        voltage_v: v,
        window_s: window,
        exec_time_s: exec,
        battery_capacity_mah: default_capacity(),
        mode,
    }
}

fn kb(v: f64) -> u64 {
    (v * KB as f64).round() as u64
}

pub fn preset(name: &str) -> Result<Preset> {
    let ll = |n: &str| format!("{n}/low_latency");
    let lp = |n: &str| format!("{n}/low_power");
    match name {
        "epilepsy" => {
            let model = UpdatePayload::model(29_200);
            let prototypes = UpdatePayload::prototypes(2 * 16 * 2);
            Ok(Preset {
                name: "epilepsy",
                low_latency: profile(ll(name), PowerMode::LowLatency, 450.0, 50.0, Some(18.7), 1.2, 12.0, 1.9),
                low_power: profile(lp(name), PowerMode::LowPower, 75.0, 3.7, None, 0.8, 12.0, 12.0),
                memory: MemoryBudget::standard(kb(117.0), model.bytes, prototypes.bytes, kb(93.0)),
                model,
                prototypes,
            })
        }
        "af" => {
            let model = UpdatePayload::model(209 * KB);
            let prototypes = UpdatePayload::prototypes(4 * 32 * 4);
            Ok(Preset {
                name: "af",
                low_latency: profile(ll(name), PowerMode::LowLatency, 450.0, 50.0, Some(18.7), 1.2, 10.0, 0.76),
                low_power: profile(lp(name), PowerMode::LowPower, 34.5, 1.9, None, 0.8, 10.0, 10.0),
                memory: MemoryBudget::standard(kb(3.9), model.bytes, prototypes.bytes, kb(146.5)),
                model,
                prototypes,
            })
        }
        other => Err(Error::Config(format!(
            "unknown preset {other:?} (expected one of {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Scenario file. With `preset`, missing sections come from that preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub hardware: Option<OneOrMany<HardwareProfile>>,
    #[serde(default)]
    pub link: Option<LinkSpec>,
    #[serde(default)]
    pub memory: Option<MemoryBudget>,
    #[serde(default)]
    pub payloads: Option<Vec<UpdatePayload>>,
}

impl Scenario {
    pub fn from_preset(name: &str) -> Result<Self> {
        preset(name)?;
        Ok(Scenario {
            preset: Some(name.into()),
            ..Default::default()
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::format(
                "scenario",
                format!("line {} column {}: {e}", e.line(), e.column()),
            )
        })
    }

    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let p = self.preset.as_deref().map(preset).transpose()?;
        let hardware = match (&self.hardware, &p) {
            (Some(h), _) => h.to_vec(),
            (None, Some(p)) => vec![p.low_latency.clone(), p.low_power.clone()],
            (None, None) => Vec::new(),
        };
        let payloads = match (&self.payloads, &p) {
            (Some(v), _) => v.clone(),
            (None, Some(p)) => vec![p.model, p.prototypes],
            (None, None) => Vec::new(),
        };
        let memory = self.memory.clone().or_else(|| p.as_ref().map(|p| p.memory.clone()));
        if hardware.is_empty() && payloads.is_empty() && memory.is_none() {
            return Err(Error::Config("scenario has no hardware, payloads or memory (and no preset)".into()));
        }
        Ok(ResolvedScenario {
            name: self.preset.clone().unwrap_or_else(|| "custom".into()),
            hardware,
            link: self.link.unwrap_or_default(),
            memory,
            payloads,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScenario {
    pub name: String,
    pub hardware: Vec<HardwareProfile>,
    pub link: LinkSpec,
    pub memory: Option<MemoryBudget>,
    pub payloads: Vec<UpdatePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub profile: String,
    pub mode: PowerMode,
    pub frequency_mhz: f64,
    pub duty_cycle: f64,
    pub avg_power_mw: f64,
    pub battery_life_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub kind: PayloadKind,
    pub bytes: u64,
    pub transfer_s: f64,
    /// Transfer time over each low-latency profile's execution time.
    pub overhead: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub link: LinkSpec,
    pub power: Vec<PowerRow>,
    pub transfers: Vec<TransferRow>,
    pub savings_ratio: Option<f64>,
    pub memory: Option<MemoryReport>,
}

/// Evaluates a resolved scenario. An over-budget memory section is
/// reported (with `fits: false`), not raised; see [`check_memory`].
pub fn simulate(s: &ResolvedScenario) -> Result<SimulationReport> {
    s.link.validate()?;
    let power = s
        .hardware
        .iter()
        .map(|h| {
            Ok(PowerRow {
                profile: h.name.clone(),
                mode: h.mode,
                frequency_mhz: h.frequency_mhz,
                duty_cycle: h.duty_cycle(),
                avg_power_mw: avg_power(h)?,
                battery_life_h: battery_life_hours(h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let transfers = s
        .payloads
        .iter()
        .map(|p| {
            let overhead = s
                .hardware
                .iter()
                .filter(|h| h.mode == PowerMode::LowLatency)
                .map(|h| Ok((h.name.clone(), update_overhead_fraction(p, &s.link, h)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TransferRow {
                kind: p.kind,
                bytes: p.bytes,
                transfer_s: transfer_time(p, &s.link)?,
                overhead,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = s.payloads.iter().find(|p| p.kind == PayloadKind::Model);
    let protos = s.payloads.iter().find(|p| p.kind == PayloadKind::Prototypes);
    let savings_ratio = match (model, protos) {
        (Some(m), Some(p)) => Some(update_savings_ratio(m, p)?),
        _ => None,
    };
    Ok(SimulationReport {
        scenario: s.name.clone(),
        link: s.link,
        power,
        transfers,
        savings_ratio,
        memory: s.memory.as_ref().map(memory_report),
    })
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

impl SimulationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario: {}  link: {} bps x {}",
            self.scenario, self.link.throughput_bps, self.link.protocol_efficiency
        );
        if !self.power.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .power
                .iter()
                .map(|p| {
                    vec![
                        p.profile.clone(),
                        match p.mode {
                            PowerMode::LowLatency => "low_latency".into(),
                            PowerMode::LowPower => "low_power".into(),
                        },
                        format!("{:.1}", p.frequency_mhz),
                        format!("{:.4}", p.duty_cycle),
                        format!("{:.3}", p.avg_power_mw),
                        format!("{:.1}", p.battery_life_h),
                    ]
                })
                .collect();
            out.push_str(&table(&["profile", "mode", "MHz", "duty", "avg_mW", "battery_h"], &rows));
        }
        if !self.transfers.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .transfers
                .iter()
                .map(|t| {
                    let overhead = t
                        .overhead
                        .iter()
                        .map(|(n, f)| format!("{:.1}% of {n}", 100.0 * f))
                        .collect::<Vec<_>>()
                        .join("; ");
                    vec![
                        format!("{:?}", t.kind).to_lowercase(),
                        t.bytes.to_string(),
                        format!("{:.3}", 1e3 * t.transfer_s),
                        overhead,
                    ]
                })
                .collect();
            out.push_str(&table(&["payload", "bytes", "transfer_ms", "overhead"], &rows));
        }
        if let Some(r) = self.savings_ratio {
            let _ = writeln!(out, "\nupdate savings: {r:.2}x");
        }
        if let Some(m) = &self.memory {
            out.push('\n');
            let mut rows: Vec<Vec<String>> = m
                .regions
                .iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        r.bytes.to_string(),
                        format!("{:.2}", r.kb),
                        if r.overwritable { "yes".into() } else { "no".into() },
                    ]
                })
                .collect();
            rows.push(vec!["total".into(), m.used_bytes.to_string(), format!("{:.2}", m.used_bytes as f64 / KB as f64), String::new()]);
            out.push_str(&table(&["region", "bytes", "KB", "overwritable"], &rows));
            let _ = writeln!(
                out,
                "memory: {} ({} B budget, slack {} B)",
                if m.fits { "fits" } else { "OVER BUDGET" },
                m.total_bytes,
                m.slack_bytes
            );
        }
        out
    }
}
