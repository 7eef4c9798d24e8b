//! Per-string electro-thermal simulation: inverter loss, SOC–OCV lookup,
//! equivalent-circuit cell current, Coulomb counting and a lumped thermal
//! mass.
//!
//! Power is in kW at the AC terminals with charging positive. Inside the
//! string the DC power is split evenly over `n_cells` identical cells.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Piecewise-linear open-circuit voltage as a function of SOC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct OcvCurve {
    points: Vec<(f64, f64)>,
}

impl OcvCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("OCV curve needs at least two breakpoints".into()));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::Config("OCV breakpoints must span SOC 0 to 1".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) || !(w[1].1 > w[0].1) {
                return Err(Error::Config(format!(
                    "OCV curve must be strictly increasing, got {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        if points.iter().any(|p| !p.1.is_finite() || p.1 <= 0.0) {
            return Err(Error::Config("OCV voltages must be positive".into()));
        }
        Ok(Self { points })
    }

    /// Eleven-point NMC-like table from 3.0 V to 4.2 V.
    pub fn nmc() -> Self {
        const V: [f64; 11] = [3.00, 3.45, 3.55, 3.62, 3.68, 3.74, 3.82, 3.90, 3.98, 4.08, 4.20];
        Self {
            points: V.iter().enumerate().map(|(i, &v)| (i as f64 / 10.0, v)).collect(),
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn voltage(&self, soc: f64) -> Result<f64> {
        ocv_from_soc(soc, self)
    }

    /// Average voltage over SOC 0..1, i.e. stored energy per unit charge.
    pub fn mean_voltage(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum()
    }
}

impl Default for OcvCurve {
    fn default() -> Self {
        Self::nmc()
    }
}

impl TryFrom<Vec<(f64, f64)>> for OcvCurve {
    type Error = Error;
    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<OcvCurve> for Vec<(f64, f64)> {
    fn from(c: OcvCurve) -> Self {
        c.points
    }
}

pub fn ocv_from_soc(soc: f64, curve: &OcvCurve) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("SOC {soc} outside [0, 1]")));
    }
    let pts = &curve.points;
    let k = pts.partition_point(|p| p.0 <= soc).clamp(1, pts.len() - 1);
    let (s0, v0) = pts[k - 1];
    let (s1, v1) = pts[k];
    Ok(v0 + (soc - s0) / (s1 - s0) * (v1 - v0))
}

/// Lumped thermal mass: `τ' = k1·p_heat − k2·(τ − τ_air)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    /// Temperature rise per kWh of heat, K/kWh.
    pub k1: f64,
    /// Relaxation rate toward ambient, 1/h.
    pub k2: f64,
    /// Ambient temperature, °C.
    pub tau_air: f64,
}

impl ThermalParams {
    pub fn from_geometry(g: &ThermalGeometry, tau_air: f64) -> Result<Self> {
        let heat_capacity = g.mass_kg * g.specific_heat;
        if !(heat_capacity > 0.0) || !(g.convective_coeff > 0.0) || !(g.area_m2 > 0.0) {
            return Err(Error::Config("thermal geometry must be positive".into()));
        }
        Ok(Self {
            k1: 3.6e6 / heat_capacity,
            k2: g.convective_coeff * g.area_m2 * 3600.0 / heat_capacity,
            tau_air,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) || !(self.k2 > 0.0) || !self.tau_air.is_finite() {
            return Err(Error::Config(format!("invalid thermal parameters {self:?}")));
        }
        Ok(())
    }
}

/// Physical quantities behind [`ThermalParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalGeometry {
    pub mass_kg: f64,
    /// J/(kg·K)
    pub specific_heat: f64,
    /// W/(m²·K)
    pub convective_coeff: f64,
    pub area_m2: f64,
}

/// Inverter loss `a0 + a1·|p| + a2·p²` while switching, zero when idle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterParams {
    /// Standby loss, kW.
    pub a0: f64,
    pub a1: f64,
    /// 1/kW
    pub a2: f64,
}

pub fn inverter_loss(p: f64, params: &InverterParams, rating: f64) -> Result<f64> {
    if !(p.abs() <= rating * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("inverter power {p} kW exceeds rating {rating} kW")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(params.a0 + params.a1 * p.abs() + params.a2 * p * p)
}

/// Cell current for terminal power `p_cell` (W, discharge positive) from
/// `p = ocv·I − I²·r`, taking the root continuous through zero.
pub fn cell_current(p_cell: f64, ocv: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("cell resistance {r} must be positive")));
    }
    let disc = ocv * ocv - 4.0 * r * p_cell;
    if !(disc >= 0.0) {
        return Err(Error::Domain(format!(
            "cell power {p_cell} W exceeds the deliverable limit {} W",
            ocv * ocv / (4.0 * r)
        )));
    }
    // (ocv − √disc)/(2r) rewritten to avoid cancellation at small power
    Ok(2.0 * p_cell / (ocv + disc.sqrt()))
}

/// All electrical losses of the string as heat, kW.
pub fn heat_power(current: f64, r: f64, n_cells: usize, p_inv_loss: f64) -> f64 {
    cell_joule_loss(current, r, n_cells) + p_inv_loss
}

fn cell_joule_loss(current: f64, r: f64, n_cells: usize) -> f64 {
    n_cells as f64 * current * current * r / 1000.0
}

pub fn thermal_step(tau_prev: f64, p_heat_prev: f64, params: &ThermalParams, dt: f64) -> f64 {
    tau_prev + dt * (params.k1 * p_heat_prev - params.k2 * (tau_prev - params.tau_air))
}

/// SOC after drawing `current` for `dt` hours, clamped to [0, 1]. The flag
/// reports whether the clamp was active.
pub fn coulomb_count(soc_prev: f64, current: f64, dt: f64, cell_capacity: f64) -> (f64, bool) {
    let soc = soc_prev - current * dt / cell_capacity;
    let clamped = soc.clamp(0.0, 1.0);
    (clamped, clamped != soc)
}

/// Static description of one battery string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StringSpec {
    pub name: String,
    /// kWh
    pub energy_capacity: f64,
    /// kW
    pub power_rating: f64,
    pub n_cells: usize,
    /// Ah
    pub cell_capacity: f64,
    /// Ω
    pub internal_resistance: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    #[serde(default)]
    pub ocv: OcvCurve,
    pub thermal: ThermalParams,
    pub inverter: InverterParams,
}

impl StringSpec {
    /// Builds a spec whose cell capacity makes `n_cells` cells store
    /// `energy_capacity` at the curve's mean voltage.
    #[allow(clippy::too_many_arguments)]
    pub fn sized(
        name: &str,
        energy_capacity: f64,
        power_rating: f64,
        n_cells: usize,
        internal_resistance: f64,
        geometry: &ThermalGeometry,
        tau_air: f64,
        inverter: InverterParams,
    ) -> Result<Self> {
        let ocv = OcvCurve::nmc();
        let spec = Self {
            name: name.into(),
            energy_capacity,
            power_rating,
            n_cells,
            cell_capacity: energy_capacity * 1000.0 / (n_cells.max(1) as f64 * ocv.mean_voltage()),
            internal_resistance,
            soc_min: 0.1,
            soc_max: 0.9,
            ocv,
            thermal: ThermalParams::from_geometry(geometry, tau_air)?,
            inverter,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 300 kWh / 75 kW string.
    pub fn string_a() -> Self {
        Self::sized(
            "A",
            300.0,
            75.0,
            324,
            0.0005,
            &ThermalGeometry { mass_kg: 1800.0, specific_heat: 1000.0, convective_coeff: 5.0, area_m2: 10.0 },
            25.0,
            InverterParams { a0: 0.0, a1: 0.01, a2: 0.015 / 75.0 },
        )
        .expect("built-in string A is valid")
    }

    /// The 200 kWh / 50 kW string.
    pub fn string_b() -> Self {
        Self::sized(
            "B",
            200.0,
            50.0,
            216,
            0.0006,
            &ThermalGeometry { mass_kg: 1200.0, specific_heat: 1000.0, convective_coeff: 5.0, area_m2: 20.0 / 3.0 },
            25.0,
            InverterParams { a0: 0.0, a1: 0.01, a2: 0.015 / 50.0 },
        )
        .expect("built-in string B is valid")
    }

    pub fn default_pair() -> Vec<Self> {
        vec![Self::string_a(), Self::string_b()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("string {}: {what}", self.name)));
        if !(self.energy_capacity > 0.0) {
            return bad("energy capacity must be positive");
        }
        if !(self.power_rating > 0.0) {
            return bad("power rating must be positive");
        }
        if self.n_cells == 0 {
            return bad("needs at least one cell");
        }
        if !(self.cell_capacity > 0.0) || !(self.internal_resistance > 0.0) {
            return bad("cell capacity and resistance must be positive");
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return bad("SOC limits must satisfy 0 <= min < max <= 1");
        }
        let inv = &self.inverter;
        if !(inv.a0 >= 0.0 && inv.a1 >= 0.0 && inv.a2 >= 0.0) {
            return bad("inverter coefficients must be non-negative");
        }
        let full = inverter_loss(self.power_rating, inv, self.power_rating)?;
        if !(full < self.power_rating) {
            return bad("inverter loss at rated power must stay below the rating");
        }
        self.thermal.validate()?;
        let ocv_max = self.ocv.points.last().map_or(0.0, |p| p.1);
        let v_min = self.ocv.points[0].1;
        let p_cell_max = (self.power_rating + full) * 1000.0 / self.n_cells as f64;
        if v_min * v_min < 4.0 * self.internal_resistance * p_cell_max || ocv_max <= 0.0 {
            return bad("rated discharge exceeds what the cells can deliver at empty");
        }
        Ok(())
    }
}

/// Dynamic state of one string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringState {
    pub soc: f64,
    /// °C
    pub temperature: f64,
}

/// Which limits changed the requested set point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampFlags {
    /// Clipped to the power rating.
    pub rating: bool,
    /// Reduced to keep SOC within the string's limits.
    pub soc_limited: bool,
    /// Dropped to zero because the inverter would consume it entirely.
    pub standby: bool,
    /// Coulomb counting hit 0 or 1.
    pub saturated: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.rating || self.soc_limited || self.standby || self.saturated
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStepResult {
    pub p_requested: f64,
    /// kW after clamping.
    pub p_applied: f64,
    /// kW
    pub p_inv_loss: f64,
    /// Cell I²R loss over the whole string, kW.
    pub p_cell_loss: f64,
    /// kW; every loss ends up as heat.
    pub p_heat: f64,
    /// A per cell, discharge positive.
    pub cell_current: f64,
    /// OCV at the start of the step, V.
    pub ocv: f64,
    pub new_state: StringState,
    pub flags: ClampFlags,
}

impl SimStepResult {
    /// Total electrical loss, kW.
    pub fn p_loss(&self) -> f64 {
        self.p_inv_loss + self.p_cell_loss
    }
}

struct Chain {
    p_inv: f64,
    current: f64,
    ocv: f64,
    soc: f64,
    saturated: bool,
}

fn chain(state: &StringState, p: f64, spec: &StringSpec, dt: f64) -> Result<Chain> {
    let p_inv = inverter_loss(p, &spec.inverter, spec.power_rating)?;
    let p_dc = p - p_inv;
    let p_cell = -p_dc * 1000.0 / spec.n_cells as f64;
    let ocv = ocv_from_soc(state.soc, &spec.ocv)?;
    let current = cell_current(p_cell, ocv, spec.internal_resistance)?;
    let (soc, saturated) = coulomb_count(state.soc, current, dt, spec.cell_capacity);
    Ok(Chain { p_inv, current, ocv, soc, saturated })
}

/// Advances one string by `dt` hours at set point `p_set`.
///
/// The set point is clipped to the rating, then scaled down (by bisection)
/// until the resulting SOC stays within `[soc_min, soc_max]`, or at least
/// does not move further outside when the state already is.
pub fn simulate_step(state: &StringState, p_set: f64, spec: &StringSpec, dt: f64) -> Result<SimStepResult> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step length {dt} must be positive")));
    }
    if !p_set.is_finite() {
        return Err(Error::Domain(format!("set point {p_set} is not finite")));
    }
    let mut flags = ClampFlags::default();
    let mut p = p_set.clamp(-spec.power_rating, spec.power_rating);
    flags.rating = p != p_set;

    let lo_lim = spec.soc_min.min(state.soc);
    let hi_lim = spec.soc_max.max(state.soc);
    let feasible = |p: f64| {
        chain(state, p, spec, dt).is_ok_and(|c| c.soc >= lo_lim && c.soc <= hi_lim && !c.saturated)
    };
    if p != 0.0 && !feasible(p) {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if feasible(mid * p) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        p *= lo;
        if p.abs() < 1e-9 {
            p = 0.0;
        }
        flags.soc_limited = true;
    }
    if p != 0.0 && inverter_loss(p, &spec.inverter, spec.power_rating)? >= p.abs() {
        p = 0.0;
        flags.standby = true;
    }

    let c = chain(state, p, spec, dt)?;
    flags.saturated = c.saturated;
    let p_cell_loss = cell_joule_loss(c.current, spec.internal_resistance, spec.n_cells);
    let p_heat = heat_power(c.current, spec.internal_resistance, spec.n_cells, c.p_inv);
    let temperature = thermal_step(state.temperature, p_heat, &spec.thermal, dt);
    Ok(SimStepResult {
        p_requested: p_set,
        p_applied: p,
        p_inv_loss: c.p_inv,
        p_cell_loss,
        p_heat,
        cell_current: c.current,
        ocv: c.ocv,
        new_state: StringState { soc: c.soc, temperature },
        flags,
    })
}

/// Chemical energy change of a step, kWh, valued at the step's starting
/// OCV. This is exactly the energy the equivalent circuit moves through the
/// OCV source, so it balances `(p_applied − losses)·dt` to rounding.
pub fn stored_energy_change(before: &StringState, after: &SimStepResult, spec: &StringSpec) -> f64 {
    (after.new_state.soc - before.soc) * spec.n_cells as f64 * spec.cell_capacity * after.ocv / 1000.0
}
