//! Synthetic geo-event corpora with planted homes and commuting structure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::DateTime;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::ingest::GeoEvent;

/// Generator settings, read from a flat `key = value` file.
///
/// ```toml
/// zones = [[32.55, -117.05], [32.75, -117.15]]
/// users_per_zone = 100
/// commute = [[1.0, 0.2], [0.2, 1.0]]
/// night_events = 6
/// day_events = 10
/// sigma = 0.005
/// seed = 7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Zone centers as `[lat, lon]`.
    pub zones: Vec<[f64; 2]>,
    pub users_per_zone: usize,
    /// Row `i` gives the relative propensity of zone-`i` residents to spend
    /// a day event in each zone. An all-zero row keeps them home.
    pub commute: Vec<Vec<f64>>,
    pub night_events: usize,
    pub day_events: usize,
    /// Positional noise in degrees; Gaussian truncated at 3 sigma.
    pub sigma: f64,
    pub seed: u64,
    /// Local clock offset from UTC, minutes.
    #[serde(default = "default_offset")]
    pub utc_offset_minutes: i32,
    /// Explicit community per zone. Defaults to the connected components of
    /// the positive off-diagonal commute entries.
    #[serde(default)]
    pub zone_communities: Option<Vec<usize>>,
    /// First day of the simulated period, as Unix seconds at UTC midnight.
    #[serde(default = "default_start")]
    pub start_unix: i64,
    #[serde(default = "default_days")]
    pub days: u32,
}

fn default_offset() -> i32 {
    -480
}

fn default_start() -> i64 {
    // 2014-01-01T00:00:00Z
    1_388_534_400
}

fn default_days() -> u32 {
    365
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::config("synth", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynthConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let z = self.zones.len();
        if z == 0 {
            return Err(Error::config("zones", "at least one zone required"));
        }
        for (i, &[lat, lon]) in self.zones.iter().enumerate() {
            GeoPoint::new(lat, lon).map_err(|e| Error::config(format!("zones[{i}]"), e.to_string()))?;
        }
        if self.commute.len() != z || self.commute.iter().any(|r| r.len() != z) {
            return Err(Error::config("commute", format!("must be {z}x{z}")));
        }
        if self.commute.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config("commute", "entries must lie in [0, 1]"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config("sigma", "must be a non-negative real"));
        }
        if !(-840..=840).contains(&self.utc_offset_minutes) {
            return Err(Error::config("utc_offset_minutes", "outside [-840, 840]"));
        }
        if self.days == 0 {
            return Err(Error::config("days", "must be positive"));
        }
        if let Some(c) = &self.zone_communities {
            if c.len() != z {
                return Err(Error::config("zone_communities", format!("needs {z} entries")));
            }
        }
        Ok(())
    }

    /// Five zones 0.6 degrees apart in two commuting blocks, `{0, 1, 2}` and
    /// `{3, 4}`.
    pub fn two_blocks(users_per_zone: usize, seed: u64) -> Self {
        let zones = vec![
            [32.0, -118.0],
            [32.0, -117.4],
            [32.6, -117.7],
            [33.4, -116.6],
            [33.4, -116.0],
        ];
        let block = [0, 0, 0, 1, 1];
        let commute = (0..5)
            .map(|i| (0..5).map(|j| if block[i] == block[j] { 1.0 } else { 0.0 }).collect())
            .collect();
        SynthConfig {
            zones,
            users_per_zone,
            commute,
            night_events: 6,
            day_events: 10,
            sigma: 0.005,
            seed,
            utc_offset_minutes: -480,
            zone_communities: None,
            start_unix: default_start(),
            days: 365,
        }
    }

    fn zone_points(&self) -> Vec<GeoPoint> {
        self.zones
            .iter()
            .map(|&[lat, lon]| GeoPoint::new(lat, lon).expect("validated"))
            .collect()
    }

    fn communities(&self) -> Vec<usize> {
        if let Some(c) = &self.zone_communities {
            return c.clone();
        }
        let z = self.zones.len();
        let mut label: Vec<Option<usize>> = vec![None; z];
        let mut next = 0;
        for start in 0..z {
            if label[start].is_some() {
                continue;
            }
            let mut stack = vec![start];
            label[start] = Some(next);
            while let Some(i) = stack.pop() {
                for j in 0..z {
                    if label[j].is_none() && i != j && (self.commute[i][j] > 0.0 || self.commute[j][i] > 0.0) {
                        label[j] = Some(next);
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        label.into_iter().map(|l| l.expect("all labeled")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// True home zone per user.
    pub home_zone: BTreeMap<String, usize>,
    /// Planted community per zone.
    pub zone_community: Vec<usize>,
    pub zones: Vec<GeoPoint>,
}

impl GroundTruth {
    /// Index of the zone closest to `p`.
    pub fn zone_of(&self, p: &GeoPoint) -> usize {
        crate::geo::nearest_center(p, &self.zones).expect("at least one zone")
    }

    pub fn write_users_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user", "home_zone"])?;
        for (u, z) in &self.home_zone {
            wtr.write_record([u.as_str(), &z.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<truth csv>", e))?;
        Ok(())
    }

    pub fn write_zones_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["zone", "lat", "lon", "community"])?;
        for (i, (p, c)) in self.zones.iter().zip(&self.zone_community).enumerate() {
            wtr.write_record([i.to_string(), p.lat().to_string(), p.lon().to_string(), c.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<zones csv>", e))?;
        Ok(())
    }
}

/// Draw from N(0, sigma) truncated to [-3 sigma, 3 sigma] by rejection.
fn truncated<R: Rng>(rng: &mut R, normal: &Option<Normal<f64>>, sigma: f64) -> f64 {
    match normal {
        None => 0.0,
        Some(n) => loop {
            let x = n.sample(rng);
            if x.abs() <= 3.0 * sigma {
                break x;
            }
        },
    }
}

fn jitter<R: Rng>(rng: &mut R, center: &GeoPoint, normal: &Option<Normal<f64>>, sigma: f64) -> GeoPoint {
    let lat = (center.lat() + truncated(rng, normal, sigma)).clamp(-90.0, 90.0);
    let lon = (center.lon() + truncated(rng, normal, sigma)).clamp(-180.0, 180.0);
    GeoPoint::new(lat, lon).expect("clamped")
}

/// Night events fall at local 22:30-03:30 around the home zone; day events
/// fall at local 09:00-18:00 around a zone drawn from the commute row.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<GeoEvent>, GroundTruth)> {
    cfg.validate()?;
    let zones = cfg.zone_points();
    let normal = (cfg.sigma > 0.0).then(|| Normal::new(0.0, cfg.sigma).expect("finite sigma"));
    let rows: Vec<Option<WeightedIndex<f64>>> = cfg
        .commute
        .iter()
        .map(|r| WeightedIndex::new(r).ok())
        .collect();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset = i64::from(cfg.utc_offset_minutes) * 60;
    let mut events = Vec::new();
    let mut home_zone = BTreeMap::new();
    let mut next_event = 0u64;
    let stamp = |rng: &mut ChaCha8Rng, local_secs: i64| {
        let day = rng.gen_range(0..i64::from(cfg.days));
        DateTime::from_timestamp(cfg.start_unix + day * 86_400 + local_secs - offset, 0)
            .expect("timestamp in range")
    };

    for (zone, center) in zones.iter().enumerate() {
        for k in 0..cfg.users_per_zone {
            let user_id = format!("u{zone:02}-{k:05}");
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            home_zone.insert(user_id.clone(), zone);
            for _ in 0..cfg.night_events {
                // 22:30 + up to 5h, wrapping past midnight
                let local = (22 * 3600 + 1800 + rng.gen_range(0..5 * 3600)) % 86_400;
                let instant = stamp(&mut rng, local);
                events.push(GeoEvent {
                    event_id: format!("e{next_event:09}"),
                    user_id: user_id.clone(),
                    instant,
                    location: jitter(&mut rng, center, &normal, cfg.sigma),
                });
                next_event += 1;
            }
            for _ in 0..cfg.day_events {
                let dest = rows[zone].as_ref().map_or(zone, |w| w.sample(&mut rng));
                let local = 9 * 3600 + rng.gen_range(0..9 * 3600);
                let instant = stamp(&mut rng, local);
                events.push(GeoEvent {
                    event_id: format!("e{next_event:09}"),
                    user_id: user_id.clone(),
                    instant,
                    location: jitter(&mut rng, &zones[dest], &normal, cfg.sigma),
                });
                next_event += 1;
            }
        }
    }
    let truth = GroundTruth {
        home_zone,
        zone_community: cfg.communities(),
        zones,
    };
    Ok((events, truth))
}

/// Normalized mutual information `I / sqrt(H_a H_b)` between two labelings;
/// 1 when both are constant and equal up to renaming.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    let la: Vec<Option<usize>> = a.iter().map(|&x| Some(x)).collect();
    let lb: Vec<Option<usize>> = b.iter().map(|&x| Some(x)).collect();
    let i = crate::select::labels_mutual_information(&la, &lb)?;
    let ha = crate::select::labels_entropy(&la)?;
    let hb = crate::select::labels_entropy(&lb)?;
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == hb { 1.0 } else { 0.0 });
    }
    Ok((i / (ha * hb).sqrt()).min(1.0))
}
