//! Surrogate crop simulator.
//!
//! Daily two-bucket (water, nitrogen) balances driven by weather produce
//! continuous stress factors, a logistic leaf-area index, and an
//! end-of-season yield of the form
//! `yield_potential * (1 - mean WSF)^p * (1 - mean NSF)^q`.
//! The simulator exposes the same observables an external crop model would
//! (WSF, NSF, LAID, HWAM) plus snapshot/rollout support so agents can look
//! ahead at predicted yield without disturbing the live season.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics;

/// First simulated day of year (mid-April planting).
pub const SEASON_START_DOY: u16 = 105;
/// Days simulated per season.
pub const SEASON_LENGTH: usize = 160;
/// Events per season schedule.
pub const EVENTS_PER_SEASON: usize = 12;

const LAI_MAX: f64 = 6.0;
const LAI_INIT: f64 = 0.1;
const LAI_GROWTH_RATE: f64 = 0.09;
const CANOPY_EXTINCTION: f64 = 0.65;
/// Radiation use efficiency, kg/ha biomass per MJ/m² intercepted.
const RUE_KG_PER_MJ: f64 = 12.0;

/// Compose a YYDDD compact date code.
pub fn yyddd(year_code: u32, doy: u16) -> u32 {
    year_code * 1000 + doy as u32
}

/// Day-of-year part of a YYDDD code.
pub fn doy_of(date: u32) -> u16 {
    (date % 1000) as u16
}

/// Two seeded weather profiles standing in for the 2023 (dry) and 2024
/// (wet) station records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum YearProfile {
    Dry2023,
    Wet2024,
}

impl YearProfile {
    pub fn year_code(self) -> u32 {
        match self {
            YearProfile::Dry2023 => 23,
            YearProfile::Wet2024 => 24,
        }
    }

    /// The 12 fixed irrigation/fertilization dates for this year (YYDDD),
    /// matching the field treatment calendar.
    pub fn event_dates(self) -> [u32; EVENTS_PER_SEASON] {
        let (yy, doys) = match self {
            YearProfile::Dry2023 => (
                23,
                [110, 160, 170, 180, 190, 195, 202, 209, 216, 223, 230, 237],
            ),
            YearProfile::Wet2024 => (
                24,
                [122, 159, 171, 181, 191, 196, 204, 212, 220, 224, 234, 238],
            ),
        };
        doys.map(|d| yyddd(yy, d))
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "2023" | "dry2023" => Ok(YearProfile::Dry2023),
            "2024" | "wet2024" => Ok(YearProfile::Wet2024),
            other => Err(Error::InvalidArgument(format!(
                "unknown year profile {other:?} (expected 2023 or 2024)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            YearProfile::Dry2023 => "2023",
            YearProfile::Wet2024 => "2024",
        }
    }
}

/// One day of weather input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherDay {
    pub doy: u16,
    pub tmax: f64,
    pub tmin: f64,
    pub rain: f64,
    pub srad: f64,
    pub et0: f64,
}

impl WeatherDay {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(1..=366).contains(&self.doy) {
            return Err(format!("doy {} out of range 1-366", self.doy));
        }
        if self.tmax < self.tmin {
            return Err(format!("tmax {} < tmin {}", self.tmax, self.tmin));
        }
        if self.rain < 0.0 {
            return Err(format!("negative rain {}", self.rain));
        }
        if self.srad < 0.0 {
            return Err(format!("negative srad {}", self.srad));
        }
        if self.et0 < 0.0 {
            return Err(format!("negative et0 {}", self.et0));
        }
        Ok(())
    }
}

/// Load weather from CSV with header `doy,tmax,tmin,rain,srad,et0`.
pub fn load_weather(path: &Path) -> Result<Vec<WeatherDay>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weather(&text, path)
}

fn parse_weather(text: &str, path: &Path) -> Result<Vec<WeatherDay>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "no weather data"))?;
    if header.1.trim() != "doy,tmax,tmin,rain,srad,et0" {
        return Err(Error::parse(
            path,
            1,
            format!("bad header {:?}, expected doy,tmax,tmin,rain,srad,et0", header.1),
        ));
    }
    let mut days = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number {:?}", fields[i])))
        };
        let day = WeatherDay {
            doy: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad doy {:?}", fields[0])))?,
            tmax: num(1)?,
            tmin: num(2)?,
            rain: num(3)?,
            srad: num(4)?,
            et0: num(5)?,
        };
        day.validate()
            .map_err(|m| Error::parse(path, lineno, m))?;
        if let Some(prev) = days.last() {
            let prev: &WeatherDay = prev;
            if day.doy != prev.doy + 1 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-contiguous days: {} after {}", day.doy, prev.doy),
                ));
            }
        }
        days.push(day);
    }
    if days.is_empty() {
        return Err(Error::parse(path, 1, "no weather data"));
    }
    Ok(days)
}

/// Serialize weather in the CSV format accepted by [`load_weather`].
pub fn weather_to_csv(days: &[WeatherDay]) -> String {
    let mut out = String::from("doy,tmax,tmin,rain,srad,et0\n");
    for d in days {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.doy, d.tmax, d.tmin, d.rain, d.srad, d.et0
        );
    }
    out
}

/// Deterministic synthetic season weather.
///
/// The same seed draws the same per-day random numbers for both profiles;
/// the wet profile rains on a superset of the dry profile's days with larger
/// amounts, so total seasonal rain is strictly ordered dry < wet.
pub fn generate_weather(seed: u64, profile: YearProfile) -> Vec<WeatherDay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p_rain, rain_mean, et0_scale) = match profile {
        YearProfile::Dry2023 => (0.08, 5.0, 1.0),
        YearProfile::Wet2024 => (0.20, 8.0, 0.88),
    };
    let mut days = Vec::with_capacity(SEASON_LENGTH);
    for pos in 0..SEASON_LENGTH {
        let t = pos as f64 / (SEASON_LENGTH - 1) as f64;
        let seasonal = (std::f64::consts::PI * t).sin();
        // Draw unconditionally so both profiles consume identical streams.
        let u_rain: f64 = rng.gen();
        let amount_draw: f64 = rng.gen();
        let tmax_noise: f64 = rng.gen::<f64>() - 0.5;
        let span_noise: f64 = rng.gen::<f64>() - 0.5;
        let rain = if u_rain < p_rain {
            -(1.0 - amount_draw).ln() * rain_mean
        } else {
            0.0
        };
        let wet_day = rain > 0.0;
        let tmax = 18.0 + 14.0 * seasonal + 3.0 * tmax_noise;
        let tmin = tmax - (11.0 + 3.0 * span_noise);
        let srad = 14.0 + 10.0 * seasonal - if wet_day { 4.0 } else { 0.0 };
        let et0 = (2.2 + 3.8 * seasonal) * et0_scale * if wet_day { 0.7 } else { 1.0 };
        days.push(WeatherDay {
            doy: SEASON_START_DOY + pos as u16,
            tmax,
            tmin,
            rain,
            srad,
            et0,
        });
    }
    days
}

/// Surrogate calibration knobs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SoilParams {
    /// Plant-available water at field capacity, mm.
    pub water_capacity: f64,
    pub init_water: f64,
    pub init_n: f64,
    /// Soil mineral-nitrogen holding capacity, kg/ha; surplus leaches.
    pub n_capacity: f64,
    /// Daily nitrogen demand per growth stage (seedling, flowering, boll), kg/ha/day.
    pub n_demand_curve: [f64; 3],
    /// Crop coefficient per growth stage, multiplies reference ET.
    pub water_demand_factor: [f64; 3],
    pub yield_potential: f64,
    /// Yield sensitivity exponents for (water, nitrogen) stress.
    pub stress_yield_sensitivity: (f64, f64),
}

impl SoilParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=self.water_capacity).contains(&self.init_water) {
            return Err(Error::InvalidData(format!(
                "init_water {} outside [0, {}]",
                self.init_water, self.water_capacity
            )));
        }
        if !(0.0..=self.n_capacity).contains(&self.init_n) {
            return Err(Error::InvalidData(format!(
                "init_n {} outside [0, {}]",
                self.init_n, self.n_capacity
            )));
        }
        if self.init_n < 0.0
            || self.n_demand_curve.iter().any(|&d| d < 0.0)
            || self.water_demand_factor.iter().any(|&d| d < 0.0)
        {
            return Err(Error::InvalidData("negative demand parameter".into()));
        }
        if self.yield_potential <= 0.0 {
            return Err(Error::InvalidData("yield_potential must be > 0".into()));
        }
        Ok(())
    }

    /// Calibration result of the shipped grid against the eight field
    /// treatments (see `calibrate` and the acceptance suite); used when no
    /// params file is supplied.
    pub fn default_calibrated() -> Self {
        SoilParams {
            water_capacity: 90.0,
            init_water: 54.0,
            init_n: 30.0,
            n_capacity: 60.0,
            n_demand_curve: [0.6, 2.6, 1.6],
            water_demand_factor: [0.575, 1.265, 0.9775],
            yield_potential: 8200.0,
            stress_yield_sensitivity: (1.5, 1.0),
        }
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "water_capacity = {}", self.water_capacity);
        let _ = writeln!(s, "init_water = {}", self.init_water);
        let _ = writeln!(s, "init_n = {}", self.init_n);
        let _ = writeln!(s, "n_capacity = {}", self.n_capacity);
        let _ = writeln!(
            s,
            "n_demand_curve = {} {} {}",
            self.n_demand_curve[0], self.n_demand_curve[1], self.n_demand_curve[2]
        );
        let _ = writeln!(
            s,
            "water_demand_factor = {} {} {}",
            self.water_demand_factor[0], self.water_demand_factor[1], self.water_demand_factor[2]
        );
        let _ = writeln!(s, "yield_potential = {}", self.yield_potential);
        let _ = writeln!(
            s,
            "stress_yield_sensitivity = {} {}",
            self.stress_yield_sensitivity.0, self.stress_yield_sensitivity.1
        );
        s
    }

    pub fn from_key_values(text: &str, path: &Path) -> Result<Self> {
        let mut p = SoilParams::default_calibrated();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, "expected key = value"))?;
            let key = key.trim();
            let nums: Vec<f64> = value
                .split_whitespace()
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::parse(path, lineno, format!("bad number {v:?}")))
                })
                .collect::<Result<_>>()?;
            let one = || -> Result<f64> {
                nums.first()
                    .copied()
                    .ok_or_else(|| Error::parse(path, lineno, "missing value"))
            };
            let three = || -> Result<[f64; 3]> {
                <[f64; 3]>::try_from(nums.as_slice())
                    .map_err(|_| Error::parse(path, lineno, "expected 3 values"))
            };
            match key {
                "water_capacity" => p.water_capacity = one()?,
                "init_water" => p.init_water = one()?,
                "init_n" => p.init_n = one()?,
                "n_capacity" => p.n_capacity = one()?,
                "n_demand_curve" => p.n_demand_curve = three()?,
                "water_demand_factor" => p.water_demand_factor = three()?,
                "yield_potential" => p.yield_potential = one()?,
                "stress_yield_sensitivity" => {
                    if nums.len() != 2 {
                        return Err(Error::parse(path, lineno, "expected 2 values"));
                    }
                    p.stress_yield_sensitivity = (nums[0], nums[1]);
                }
                other => {
                    return Err(Error::parse(path, lineno, format!("unknown key {other:?}")))
                }
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Growth stage index (0 seedling, 1 flowering, 2 boll) from position in
/// the season.
pub fn growth_stage(season_pos: usize) -> usize {
    (season_pos * 3 / SEASON_LENGTH).min(2)
}

/// Daily simulator state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropState {
    /// YYDDD of the most recently simulated day.
    pub day: u32,
    pub soil_water: f64,
    pub soil_n: f64,
    pub lai: f64,
    /// Continuous water stress for the last simulated day, 0 = none.
    pub wsf_raw: f64,
    pub nsf_raw: f64,
    pub biomass: f64,
    pub cum_irrigation: f64,
    pub cum_nitrogen: f64,
    /// Running stress integrals feeding the yield function.
    pub wsf_sum: f64,
    pub nsf_sum: f64,
    pub days_simulated: u32,
}

impl CropState {
    pub fn initial(params: &SoilParams, year_code: u32) -> Self {
        CropState {
            day: yyddd(year_code, SEASON_START_DOY - 1),
            soil_water: params.init_water,
            soil_n: params.init_n,
            lai: LAI_INIT,
            wsf_raw: 0.0,
            nsf_raw: 0.0,
            biomass: 0.0,
            cum_irrigation: 0.0,
            cum_nitrogen: 0.0,
            wsf_sum: 0.0,
            nsf_sum: 0.0,
            days_simulated: 0,
        }
    }
}

/// Advance the state by one day.
///
/// Water: supply = soil store + rain + irrigation; demand = et0 * stage
/// coefficient; stress is the unmet demand fraction and the store is the
/// clamped carryover. Nitrogen is analogous with a per-stage daily demand.
pub fn step_day(
    state: &CropState,
    weather: &WeatherDay,
    irrigation: f64,
    nitrogen: f64,
    params: &SoilParams,
) -> CropState {
    debug_assert!(irrigation >= 0.0 && nitrogen >= 0.0);
    let pos = (weather.doy.saturating_sub(SEASON_START_DOY)) as usize;
    let stage = growth_stage(pos);

    let water_demand = weather.et0 * params.water_demand_factor[stage];
    let water_supply = state.soil_water + weather.rain + irrigation;
    let wsf = if water_demand <= 0.0 {
        0.0
    } else {
        1.0 - (water_supply / water_demand).min(1.0)
    };
    let actual_et = water_demand.min(water_supply);
    let soil_water = (water_supply - actual_et).clamp(0.0, params.water_capacity);

    let n_demand = params.n_demand_curve[stage];
    let n_supply = state.soil_n + nitrogen;
    let nsf = if n_demand <= 0.0 {
        0.0
    } else {
        1.0 - (n_supply / n_demand).min(1.0)
    };
    let uptake = n_demand.min(n_supply);
    let soil_n = (n_supply - uptake).clamp(0.0, params.n_capacity);

    let healthy = (1.0 - wsf) * (1.0 - nsf);
    let lai = state.lai + LAI_GROWTH_RATE * state.lai * (1.0 - state.lai / LAI_MAX) * healthy;
    let intercepted = 1.0 - (-CANOPY_EXTINCTION * lai).exp();
    let biomass = state.biomass + RUE_KG_PER_MJ * weather.srad * intercepted * healthy;

    let year_code = state.day / 1000;
    CropState {
        day: yyddd(year_code, weather.doy),
        soil_water,
        soil_n,
        lai,
        wsf_raw: wsf,
        nsf_raw: nsf,
        biomass,
        cum_irrigation: state.cum_irrigation + irrigation,
        cum_nitrogen: state.cum_nitrogen + nitrogen,
        wsf_sum: state.wsf_sum + wsf,
        nsf_sum: state.nsf_sum + nsf,
        days_simulated: state.days_simulated + 1,
    }
}

fn season_yield(state: &CropState, params: &SoilParams) -> f64 {
    if state.days_simulated == 0 {
        return 0.0;
    }
    let n = state.days_simulated as f64;
    let (p, q) = params.stress_yield_sensitivity;
    let water_term = (1.0 - state.wsf_sum / n).max(0.0).powf(p);
    let n_term = (1.0 - state.nsf_sum / n).max(0.0).powf(q);
    params.yield_potential * water_term * n_term
}

/// One dated application event.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleEvent {
    /// YYDDD date code.
    pub date: u32,
    pub irrigation: f64,
    pub nitrogen: f64,
}

/// Exactly 12 dated (irrigation, nitrogen) events with strictly increasing
/// dates — the decision variable of the whole system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    events: [ScheduleEvent; EVENTS_PER_SEASON],
}

impl Schedule {
    pub fn new(events: Vec<ScheduleEvent>) -> Result<Self> {
        let events: [ScheduleEvent; EVENTS_PER_SEASON] =
            events.try_into().map_err(|v: Vec<ScheduleEvent>| {
                Error::InvalidData(format!("schedule must have 12 events, got {}", v.len()))
            })?;
        for w in events.windows(2) {
            if w[1].date <= w[0].date {
                return Err(Error::InvalidData(format!(
                    "schedule dates not strictly increasing: {} then {}",
                    w[0].date, w[1].date
                )));
            }
        }
        for e in &events {
            if e.irrigation < 0.0 || e.nitrogen < 0.0 {
                return Err(Error::InvalidData(format!(
                    "negative amount at date {}",
                    e.date
                )));
            }
        }
        Ok(Schedule { events })
    }

    pub fn events(&self) -> &[ScheduleEvent; EVENTS_PER_SEASON] {
        &self.events
    }

    pub fn total_irrigation(&self) -> f64 {
        self.events.iter().map(|e| e.irrigation).sum()
    }

    pub fn total_nitrogen(&self) -> f64 {
        self.events.iter().map(|e| e.nitrogen).sum()
    }

    /// CSV with header `date,irrigation_mm,nitrogen_kgha`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,irrigation_mm,nitrogen_kgha\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{}", e.date, e.irrigation, e.nitrogen);
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "date,irrigation_mm,nitrogen_kgha" => {}
            Some((_, h)) => {
                return Err(Error::parse(path, 1, format!("bad header {h:?}")));
            }
            None => return Err(Error::parse(path, 1, "empty schedule file")),
        }
        let mut events = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, lineno, "expected 3 fields"));
            }
            events.push(ScheduleEvent {
                date: fields[0].trim().parse().map_err(|_| {
                    Error::parse(path, lineno, format!("bad date {:?}", fields[0]))
                })?,
                irrigation: fields[1].trim().parse().map_err(|_| {
                    Error::parse(path, lineno, format!("bad irrigation {:?}", fields[1]))
                })?,
                nitrogen: fields[2].trim().parse().map_err(|_| {
                    Error::parse(path, lineno, format!("bad nitrogen {:?}", fields[2]))
                })?,
            });
        }
        Schedule::new(events)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// Observables captured on an event date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventObservation {
    pub date: u32,
    pub wsf: f64,
    pub nsf: f64,
    pub laid: f64,
}

/// Per-day summary for traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayRecord {
    pub day: u32,
    pub soil_water: f64,
    pub soil_n: f64,
    pub wsf: f64,
    pub nsf: f64,
    pub lai: f64,
}

/// Outcome of a simulated season.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonResult {
    /// HWAM, kg/ha.
    pub yield_kgha: f64,
    pub total_irrigation: f64,
    pub total_nitrogen: f64,
    pub event_log: Vec<EventObservation>,
    pub daily_trace: Option<Vec<DayRecord>>,
}

/// Simulate a full season applying the schedule amounts on their dates.
pub fn run_season(
    schedule: &Schedule,
    weather: &[WeatherDay],
    params: &SoilParams,
) -> Result<SeasonResult> {
    run_season_traced(schedule, weather, params, false)
}

pub fn run_season_traced(
    schedule: &Schedule,
    weather: &[WeatherDay],
    params: &SoilParams,
    trace: bool,
) -> Result<SeasonResult> {
    if weather.is_empty() {
        return Err(Error::InvalidData("empty weather record".into()));
    }
    let first = weather[0].doy;
    let last = weather[weather.len() - 1].doy;
    for e in schedule.events() {
        let doy = doy_of(e.date);
        if doy < first || doy > last {
            return Err(Error::InvalidData(format!(
                "schedule date {} outside weather range {first}-{last}",
                e.date
            )));
        }
    }
    let year_code = schedule.events()[0].date / 1000;
    let mut state = CropState::initial(params, year_code);
    let mut event_log = Vec::with_capacity(EVENTS_PER_SEASON);
    let mut daily = trace.then(Vec::new);
    for w in weather {
        let event = schedule.events().iter().find(|e| doy_of(e.date) == w.doy);
        let (irr, nit) = event.map_or((0.0, 0.0), |e| (e.irrigation, e.nitrogen));
        state = step_day(&state, w, irr, nit, params);
        if let Some(e) = event {
            event_log.push(EventObservation {
                date: e.date,
                wsf: state.wsf_raw,
                nsf: state.nsf_raw,
                laid: state.lai,
            });
        }
        if let Some(d) = daily.as_mut() {
            d.push(DayRecord {
                day: state.day,
                soil_water: state.soil_water,
                soil_n: state.soil_n,
                wsf: state.wsf_raw,
                nsf: state.nsf_raw,
                lai: state.lai,
            });
        }
    }
    Ok(SeasonResult {
        yield_kgha: season_yield(&state, params),
        total_irrigation: state.cum_irrigation,
        total_nitrogen: state.cum_nitrogen,
        event_log,
        daily_trace: daily,
    })
}

/// How a yield rollout fills in events beyond those explicitly planned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompletionPolicy {
    /// Apply the same (irrigation, nitrogen) at every remaining event.
    Uniform(f64, f64),
    /// Apply a fixed per-event plan indexed by event position.
    PerEvent([(f64, f64); EVENTS_PER_SEASON]),
}

impl CompletionPolicy {
    /// Per-event average of the control budget: 537/12 mm, 250/12 kg/ha.
    pub fn budget_average(i_total: f64, n_total: f64) -> Self {
        CompletionPolicy::Uniform(
            i_total / EVENTS_PER_SEASON as f64,
            n_total / EVENTS_PER_SEASON as f64,
        )
    }

    fn amounts(&self, event_index: usize) -> (f64, f64) {
        match self {
            CompletionPolicy::Uniform(i, n) => (*i, *n),
            CompletionPolicy::PerEvent(plan) => plan[event_index],
        }
    }
}

/// Restorable point-in-time copy of an environment's mutable state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSnapshot {
    state: CropState,
    day_idx: usize,
    next_event: usize,
}

/// A season in progress: weather + params + the 12 fixed event dates, with
/// the crop state advanced day by day and applications made on event dates.
#[derive(Debug, Clone)]
pub struct Environment<'w> {
    weather: &'w [WeatherDay],
    params: SoilParams,
    event_dates: [u32; EVENTS_PER_SEASON],
    state: CropState,
    day_idx: usize,
    next_event: usize,
}

impl<'w> Environment<'w> {
    pub fn new(
        weather: &'w [WeatherDay],
        params: SoilParams,
        event_dates: [u32; EVENTS_PER_SEASON],
    ) -> Result<Self> {
        if weather.is_empty() {
            return Err(Error::InvalidData("empty weather record".into()));
        }
        let first = weather[0].doy;
        let last = weather[weather.len() - 1].doy;
        for d in &event_dates {
            let doy = doy_of(*d);
            if doy < first || doy > last {
                return Err(Error::InvalidData(format!(
                    "event date {d} outside weather range {first}-{last}"
                )));
            }
        }
        let year_code = event_dates[0] / 1000;
        Ok(Environment {
            weather,
            params,
            event_dates,
            state: CropState::initial(&params, year_code),
            day_idx: 0,
            next_event: 0,
        })
    }

    pub fn state(&self) -> &CropState {
        &self.state
    }

    pub fn params(&self) -> &SoilParams {
        &self.params
    }

    pub fn event_dates(&self) -> &[u32; EVENTS_PER_SEASON] {
        &self.event_dates
    }

    pub fn next_event(&self) -> usize {
        self.next_event
    }

    pub fn season_done(&self) -> bool {
        self.day_idx >= self.weather.len()
    }

    fn step_current_day(&mut self, irrigation: f64, nitrogen: f64) {
        let w = &self.weather[self.day_idx];
        self.state = step_day(&self.state, w, irrigation, nitrogen, &self.params);
        self.day_idx += 1;
    }

    /// Step with zero applications up to (not including) the next event date.
    pub fn advance_to_next_event(&mut self) {
        if self.next_event >= EVENTS_PER_SEASON {
            return;
        }
        let target = doy_of(self.event_dates[self.next_event]);
        while self.day_idx < self.weather.len() && self.weather[self.day_idx].doy < target {
            self.step_current_day(0.0, 0.0);
        }
    }

    /// Apply amounts on the pending event date (stepping that day) and
    /// return the observables for the day.
    pub fn apply_event(&mut self, irrigation: f64, nitrogen: f64) -> Result<EventObservation> {
        if self.next_event >= EVENTS_PER_SEASON {
            return Err(Error::InvalidData("no pending event".into()));
        }
        let date = self.event_dates[self.next_event];
        if self.day_idx >= self.weather.len() || self.weather[self.day_idx].doy != doy_of(date) {
            return Err(Error::InvalidData(format!(
                "environment not positioned at event date {date}"
            )));
        }
        self.step_current_day(irrigation, nitrogen);
        self.next_event += 1;
        Ok(EventObservation {
            date,
            wsf: self.state.wsf_raw,
            nsf: self.state.nsf_raw,
            laid: self.state.lai,
        })
    }

    /// Step the remaining days with zero applications and return the final
    /// yield.
    pub fn run_to_end(&mut self) -> f64 {
        while self.day_idx < self.weather.len() {
            if self.next_event < EVENTS_PER_SEASON {
                let target = doy_of(self.event_dates[self.next_event]);
                if self.weather[self.day_idx].doy == target {
                    self.next_event += 1;
                }
            }
            self.step_current_day(0.0, 0.0);
        }
        season_yield(&self.state, &self.params)
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state,
            day_idx: self.day_idx,
            next_event: self.next_event,
        }
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) {
        self.state = snap.state;
        self.day_idx = snap.day_idx;
        self.next_event = snap.next_event;
    }

    /// Roll a copy of the environment to season end and return the yield.
    ///
    /// The next `planned.len()` events receive the planned amounts; all
    /// later events fall back to the completion policy. The live
    /// environment is untouched.
    pub fn rollout_yield(&self, planned: &[(f64, f64)], completion: &CompletionPolicy) -> f64 {
        let mut sim = self.clone();
        let base_event = sim.next_event;
        while sim.next_event < EVENTS_PER_SEASON && sim.day_idx < sim.weather.len() {
            sim.advance_to_next_event();
            if sim.day_idx >= sim.weather.len() {
                break;
            }
            let offset = sim.next_event - base_event;
            let (i, n) = planned
                .get(offset)
                .copied()
                .unwrap_or_else(|| completion.amounts(sim.next_event));
            // Event dates are validated against the weather range.
            sim.apply_event(i, n).expect("rollout event application");
        }
        sim.run_to_end()
    }

    /// Predicted end-of-season yield for a macro action covering the next
    /// two event dates (the Eq. 3 lookahead), with the completion policy at
    /// all remaining dates.
    pub fn predict_yield(
        &self,
        macro_action: [(f64, f64); 2],
        completion: &CompletionPolicy,
    ) -> Result<f64> {
        if self.next_event >= EVENTS_PER_SEASON {
            return Err(Error::InvalidData(
                "snapshot is past the last event".into(),
            ));
        }
        Ok(self.rollout_yield(&macro_action, completion))
    }
}

/// One calibration observation: a field schedule, its weather, and the
/// observed yield.
pub struct Observation<'w> {
    pub schedule: Schedule,
    pub weather: &'w [WeatherDay],
    pub observed_yield: f64,
}

/// Exhaustive grid search minimizing yield nRMSE over the observations.
/// Ties break toward the earlier grid point.
pub fn calibrate(grid: &[SoilParams], observations: &[Observation]) -> Result<(SoilParams, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidData("empty calibration grid".into()));
    }
    if observations.len() < 2 && grid.len() > 1 {
        return Err(Error::InvalidData(
            "calibration needs at least 2 observations".into(),
        ));
    }
    let observed: Vec<f64> = observations.iter().map(|o| o.observed_yield).collect();
    let mut best: Option<(SoilParams, f64)> = None;
    for params in grid {
        let mut predicted = Vec::with_capacity(observations.len());
        for obs in observations {
            let result = run_season(&obs.schedule, obs.weather, params)?;
            predicted.push(result.yield_kgha);
        }
        let score = metrics::nrmse(&observed, &predicted)?;
        if best.as_ref().map_or(true, |(_, b)| score < *b) {
            best = Some((*params, score));
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// The shipped default calibration grid (1296 points).
pub fn default_param_grid() -> Vec<SoilParams> {
    let mut grid = Vec::new();
    for &yield_potential in &[8200.0, 8600.0, 9000.0, 9400.0] {
        for &p in &[0.6, 0.9, 1.2, 1.5] {
            for &q in &[0.4, 0.7, 1.0] {
                for &water_capacity in &[90.0, 120.0, 150.0] {
                    for &n_capacity in &[40.0, 60.0, 90.0] {
                        for &demand_scale in &[0.85, 1.0, 1.15] {
                            grid.push(SoilParams {
                                water_capacity,
                                init_water: 0.6 * water_capacity,
                                init_n: 30.0,
                                n_capacity,
                                n_demand_curve: [0.6, 2.6, 1.6],
                                water_demand_factor: [
                                    0.5 * demand_scale,
                                    1.1 * demand_scale,
                                    0.85 * demand_scale,
                                ],
                                yield_potential,
                                stress_yield_sensitivity: (p, q),
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

/// One Table-style field treatment: name, year, schedule, observed yield.
pub struct Treatment {
    pub name: String,
    pub profile: YearProfile,
    pub schedule: Schedule,
    pub observed_yield: f64,
}

/// The eight field treatments shipped as a fixture.
pub const TREATMENTS_CSV: &str = include_str!("../fixtures/treatments.csv");

/// Parse the treatments fixture (`treatment,year,date,irrigation_mm,nitrogen_kgha,yield_kgha`).
pub fn load_treatments(text: &str) -> Result<Vec<Treatment>> {
    let path = Path::new("treatments.csv");
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "treatment,year,date,irrigation_mm,nitrogen_kgha,yield_kgha" => {}
        _ => return Err(Error::parse(path, 1, "bad or missing header")),
    }
    let mut out: Vec<(String, YearProfile, Vec<ScheduleEvent>, f64)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(path, lineno, "expected 6 fields"));
        }
        let name = f[0].trim().to_string();
        let profile = YearProfile::parse(f[1].trim())?;
        let event = ScheduleEvent {
            date: f[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad date"))?,
            irrigation: f[3]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad irrigation"))?,
            nitrogen: f[4]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad nitrogen"))?,
        };
        let observed: f64 = f[5]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, "bad yield"))?;
        match out.last_mut() {
            Some(t) if t.0 == name => t.2.push(event),
            _ => out.push((name, profile, vec![event], observed)),
        }
    }
    out.into_iter()
        .map(|(name, profile, events, observed_yield)| {
            Ok(Treatment {
                name,
                profile,
                schedule: Schedule::new(events)?,
                observed_yield,
            })
        })
        .collect()
}
