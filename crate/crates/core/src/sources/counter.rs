//! On-chip energy counters read through the Linux power-capping sysfs tree.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::trace::{Domain, PowerSample, PowerTrace};

use super::{wall_clock_now, SourceError};

pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";

/// A raw counter value in microjoules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterReading {
    pub timestamp: f64,
    pub counter: u64,
    pub wrap_limit: u64,
}

impl CounterReading {
    pub fn new(timestamp: f64, counter: u64, wrap_limit: u64) -> Self {
        Self {
            timestamp,
            counter,
            wrap_limit,
        }
    }
}

/// Files backing one domain: the running counter and its wrap range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterFiles {
    pub energy: PathBuf,
    pub max_range: PathBuf,
}

impl CounterFiles {
    pub fn in_zone(zone: &Path) -> Self {
        Self {
            energy: zone.join("energy_uj"),
            max_range: zone.join("max_energy_range_uj"),
        }
    }

    pub fn read(&self) -> Result<CounterReading, SourceError> {
        let wrap_limit = read_u64(&self.max_range)?;
        let before = wall_clock_now();
        let counter = read_u64(&self.energy)?;
        let after = wall_clock_now();
        if wrap_limit == 0 || counter >= wrap_limit {
            return Err(SourceError::CounterRange { counter, wrap_limit });
        }
        Ok(CounterReading::new(0.5 * (before + after), counter, wrap_limit))
    }
}

fn read_u64(path: &Path) -> Result<u64, SourceError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::PermissionDenied => SourceError::PermissionDenied(path.to_path_buf()),
        _ => SourceError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    text.trim().parse().map_err(|_| SourceError::Parse {
        path: path.to_path_buf(),
        text: text.trim().to_string(),
    })
}

/// Locates per-domain counters under a power-capping root.
///
/// Zones are the `intel-rapl:N` directories and their `intel-rapl:N:M`
/// children; each has a `name` file (`package-0`, `core`, `uncore`, `dram`).
/// Only socket 0 is considered.
#[derive(Debug, Clone)]
pub struct PowercapReader {
    root: PathBuf,
}

impl Default for PowercapReader {
    fn default() -> Self {
        Self::new(DEFAULT_POWERCAP_ROOT)
    }
}

impl PowercapReader {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self, domain: Domain) -> Result<CounterFiles, SourceError> {
        let package = self.root.join("intel-rapl:0");
        let candidates: Vec<PathBuf> = if domain == Domain::Pkg {
            vec![package]
        } else {
            let mut subzones: Vec<PathBuf> = match fs::read_dir(&package) {
                Ok(rd) => rd
                    .filter_map(Result::ok)
                    .map(|e| e.path())
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("intel-rapl:0:"))
                    })
                    .collect(),
                Err(e) if e.kind() == io::ErrorKind::PermissionDenied => {
                    return Err(SourceError::PermissionDenied(package))
                }
                Err(_) => Vec::new(),
            };
            subzones.sort();
            subzones
        };
        for zone in candidates {
            let Ok(name) = fs::read_to_string(zone.join("name")) else {
                continue;
            };
            if zone_domain(name.trim()) == Some(domain) {
                return Ok(CounterFiles::in_zone(&zone));
            }
        }
        Err(SourceError::DomainUnavailable(domain))
    }

    /// Reads one domain's counter.
    pub fn read_counter(&self, domain: Domain) -> Result<CounterReading, SourceError> {
        self.files(domain)?.read()
    }
}

fn zone_domain(name: &str) -> Option<Domain> {
    match name {
        n if n.starts_with("package") => Some(Domain::Pkg),
        "core" => Some(Domain::Pp0),
        "uncore" => Some(Domain::Pp1),
        "dram" => Some(Domain::Dram),
        _ => None,
    }
}

/// Energy between two readings in microjoules, allowing for one wrap.
pub fn counter_delta(prev: u64, next: u64, wrap_limit: u64) -> u64 {
    if next >= prev {
        next - prev
    } else {
        (wrap_limit - prev) + next
    }
}

/// Converts successive counter readings into interval-average power samples
/// stamped at interval midpoints.
pub fn counters_to_power(
    readings: &[CounterReading],
    meter_id: &str,
    nominal_interval: f64,
) -> Result<PowerTrace, SourceError> {
    if readings.len() < 2 {
        return Err(SourceError::InsufficientReadings(readings.len()));
    }
    let wrap_limit = readings[0].wrap_limit;
    for (i, r) in readings.iter().enumerate() {
        if r.wrap_limit != wrap_limit {
            return Err(SourceError::WrapLimitMismatch { index: i });
        }
        if r.counter >= wrap_limit {
            return Err(SourceError::CounterRange {
                counter: r.counter,
                wrap_limit,
            });
        }
    }
    let samples = readings
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (t0, t1) = (pair[0].timestamp, pair[1].timestamp);
            let dt = t1 - t0;
            if !(dt > 0.0) {
                return Err(SourceError::NonIncreasing { index: i + 1 });
            }
            let joules = counter_delta(pair[0].counter, pair[1].counter, wrap_limit) as f64 * 1e-6;
            Ok(PowerSample::new(t0 + 0.5 * dt, joules / dt))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PowerTrace::with_samples(meter_id, nominal_interval, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn readings(ts: &[f64], cs: &[u64], wrap: u64) -> Vec<CounterReading> {
        ts.iter()
            .zip(cs)
            .map(|(&t, &c)| CounterReading::new(t, c, wrap))
            .collect()
    }

    #[test]
    fn constant_rate_counters() {
        let r = readings(&[0.0, 0.1, 0.2], &[0, 5_000_000, 10_000_000], u64::MAX);
        let t = counters_to_power(&r, "rapl", 0.1).unwrap();
        assert_eq!(t.len(), 2);
        for s in &t.samples {
            assert!((s.power - 50.0).abs() < 1e-9);
        }
        assert!((t.samples[0].timestamp - 0.05).abs() < 1e-15);
    }

    #[test]
    fn wrap_correction() {
        // (1e6 - 9e5) + 1e5 = 2e5 uJ = 0.2 J over 0.1 s
        let r = readings(&[0.0, 0.1], &[900_000, 100_000], 1_000_000);
        let t = counters_to_power(&r, "rapl", 0.1).unwrap();
        assert!((t.samples[0].power - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let r = readings(&[0.0], &[1], 10);
        assert!(matches!(
            counters_to_power(&r, "m", 0.1),
            Err(SourceError::InsufficientReadings(1))
        ));
        let r = readings(&[0.0, 0.0], &[1, 2], 10);
        assert!(matches!(
            counters_to_power(&r, "m", 0.1),
            Err(SourceError::NonIncreasing { index: 1 })
        ));
        let r = vec![CounterReading::new(0.0, 1, 10), CounterReading::new(1.0, 2, 11)];
        assert!(matches!(
            counters_to_power(&r, "m", 0.1),
            Err(SourceError::WrapLimitMismatch { index: 1 })
        ));
    }

    fn fake_tree(dir: &Path) {
        let pkg = dir.join("intel-rapl:0");
        let core = pkg.join("intel-rapl:0:0");
        let dram = pkg.join("intel-rapl:0:1");
        for (zone, name, val) in [
            (&pkg, "package-0", "5000000"),
            (&core, "core", "1234"),
            (&dram, "dram", "77"),
        ] {
            fs::create_dir_all(zone).unwrap();
            fs::write(zone.join("name"), format!("{name}\n")).unwrap();
            fs::write(zone.join("energy_uj"), format!("{val}\n")).unwrap();
            fs::write(zone.join("max_energy_range_uj"), "262143328850\n").unwrap();
        }
    }

    #[test]
    fn reads_injected_counter_files() {
        let dir = tempfile::tempdir().unwrap();
        fake_tree(dir.path());
        let reader = PowercapReader::new(dir.path());
        let pkg = reader.read_counter(Domain::Pkg).unwrap();
        assert_eq!(pkg.counter, 5_000_000);
        assert_eq!(pkg.wrap_limit, 262_143_328_850);
        assert!(pkg.counter < pkg.wrap_limit);
        assert_eq!(reader.read_counter(Domain::Pp0).unwrap().counter, 1234);
        assert_eq!(reader.read_counter(Domain::Dram).unwrap().counter, 77);
        // no integrated graphics zone
        assert!(matches!(
            reader.read_counter(Domain::Pp1),
            Err(SourceError::DomainUnavailable(Domain::Pp1))
        ));
    }

    #[test]
    fn missing_tree_means_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let reader = PowercapReader::new(dir.path().join("nope"));
        assert!(matches!(
            reader.read_counter(Domain::Pkg),
            Err(SourceError::DomainUnavailable(Domain::Pkg))
        ));
    }

    #[test]
    fn garbage_counter_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fake_tree(dir.path());
        fs::write(dir.path().join("intel-rapl:0/energy_uj"), "abc").unwrap();
        let err = PowercapReader::new(dir.path()).read_counter(Domain::Pkg).unwrap_err();
        assert!(matches!(err, SourceError::Parse { .. }));
    }
}
