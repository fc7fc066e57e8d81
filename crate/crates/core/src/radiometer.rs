//! Two-point radiometer calibration from voltage streams.
//!
//! Input is a CSV with header `t,v_cold,v_hot,v_unknown`, optionally preceded
//! by `#t_cold=<kelvin>` and `#t_hot=<kelvin>` lines.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamic::{calibrate_dynamic, DynamicConfig, DynamicMethod};
use crate::error::{CalError, Result};
use crate::experiment::Method;
use crate::static_cal::{inverse_point, ols_fit};
use crate::stats::sample_sd;

pub const DEFAULT_T_COLD: f64 = 293.69;
pub const DEFAULT_T_HOT: f64 = 325.59;

const HEADER: [&str; 4] = ["t", "v_cold", "v_hot", "v_unknown"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiometerStream {
    pub t: Vec<f64>,
    pub v_cold: Vec<f64>,
    pub v_hot: Vec<f64>,
    pub v_unknown: Vec<f64>,
    pub t_cold: f64,
    pub t_hot: f64,
}

impl RadiometerStream {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        for (context, len) in [
            ("radiometer v_cold", self.v_cold.len()),
            ("radiometer v_hot", self.v_hot.len()),
            ("radiometer v_unknown", self.v_unknown.len()),
        ] {
            if len != n {
                return Err(CalError::Dimension {
                    context,
                    expected: n,
                    found: len,
                });
            }
        }
        if !(self.t_cold.is_finite() && self.t_hot.is_finite()) {
            return Err(CalError::Config("reference temperatures must be finite".into()));
        }
        if !(self.t_cold < self.t_hot) {
            return Err(CalError::Config(format!(
                "t_cold ({}) must be below t_hot ({})",
                self.t_cold, self.t_hot
            )));
        }
        Ok(())
    }

    /// Reference responses as `T × 2` rows `[v_cold, v_hot]`.
    pub fn reference_rows(&self) -> Vec<Vec<f64>> {
        self.v_cold.iter().zip(&self.v_hot).map(|(c, h)| vec![*c, *h]).collect()
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut stream = RadiometerStream {
            t: Vec::new(),
            v_cold: Vec::new(),
            v_hot: Vec::new(),
            v_unknown: Vec::new(),
            t_cold: DEFAULT_T_COLD,
            t_hot: DEFAULT_T_HOT,
        };
        for (i, line) in text.lines().enumerate() {
            let Some(meta) = line.trim().strip_prefix('#') else {
                continue;
            };
            let Some((key, value)) = meta.split_once('=') else {
                continue;
            };
            let slot = match key.trim() {
                "t_cold" => &mut stream.t_cold,
                "t_hot" => &mut stream.t_hot,
                _ => continue,
            };
            *slot = parse_number(value, i + 1)?;
        }

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header_line = rdr.position().line().max(1) as usize;
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(HEADER) {
            return Err(CalError::Parse {
                line: header_line,
                message: format!("expected header {}, found {}", HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut rec = csv::StringRecord::new();
        loop {
            let more = rdr.read_record(&mut rec).map_err(|e| match e.position() {
                Some(pos) => CalError::Parse {
                    line: pos.line() as usize,
                    message: e.to_string(),
                },
                None => CalError::Csv(e),
            })?;
            if !more {
                break;
            }
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let vals = rec.iter().map(|s| parse_number(s, line)).collect::<Result<Vec<_>>>()?;
            stream.t.push(vals[0]);
            stream.v_cold.push(vals[1]);
            stream.v_hot.push(vals[2]);
            stream.v_unknown.push(vals[3]);
        }
        stream.validate()?;
        Ok(stream)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#t_cold={}", self.t_cold)?;
        writeln!(out, "#t_hot={}", self.t_hot)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for i in 0..self.len() {
            w.write_record([
                format!("{}", self.t[i]),
                format!("{:.16e}", self.v_cold[i]),
                format!("{:.16e}", self.v_hot[i]),
                format!("{:.16e}", self.v_unknown[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn parse_number(s: &str, line: usize) -> Result<f64> {
    let v = s.trim().parse::<f64>().map_err(|e| CalError::Parse {
        line,
        message: format!("bad number {s:?}: {e}"),
    })?;
    if !v.is_finite() {
        return Err(CalError::Parse {
            line,
            message: format!("non-finite value {s:?}"),
        });
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiometerResult {
    pub method: Method,
    /// First time index kept; earlier times are burn-in for every method.
    pub start: usize,
    /// Calibrated temperature per time from `start`.
    pub estimate: Vec<f64>,
    /// Credible band for the dynamic methods.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
    /// Sample standard deviation of `estimate`.
    pub sigma_hat: f64,
}

/// Estimates the unknown temperature at every time from `config.burn_in` on.
/// `MF2` is the static inverse baseline fitted once over the whole run.
pub fn calibrate_radiometer(
    stream: &RadiometerStream,
    method: Method,
    config: &DynamicConfig,
) -> Result<RadiometerResult> {
    stream.validate()?;
    let x = [stream.t_cold, stream.t_hot];
    let (estimate, band) = match method {
        Method::Md1 | Method::Md2 => {
            let dm = if method == Method::Md1 {
                DynamicMethod::Md1
            } else {
                DynamicMethod::Md2
            };
            let res = calibrate_dynamic(&x, &stream.reference_rows(), &stream.v_unknown, dm, config)?;
            let s = res.summary;
            (s.median, Some((s.lower, s.upper)))
        }
        Method::Mf2 => {
            let n = stream.len();
            let mut temps = Vec::with_capacity(2 * n);
            let mut volts = Vec::with_capacity(2 * n);
            for i in 0..n {
                temps.extend(x);
                volts.extend([stream.v_cold[i], stream.v_hot[i]]);
            }
            let fit = ols_fit(&temps, &volts)?;
            let start = config.burn_in.min(n);
            (stream.v_unknown[start..].iter().map(|v| inverse_point(&fit, *v)).collect(), None)
        }
        other => {
            return Err(CalError::Config(format!(
                "radiometer calibration supports MD1, MD2 and MF2, not {other}"
            )))
        }
    };
    let sigma_hat = sample_sd(&estimate);
    Ok(RadiometerResult {
        method,
        start: config.burn_in.min(stream.len()),
        estimate,
        band,
        sigma_hat,
    })
}

/// Synthetic stream `v = g_t (T + T_rec) + noise` with a linear gain ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRadiometer {
    pub horizon: usize,
    pub t_cold: f64,
    pub t_hot: f64,
    pub t_unknown: f64,
    /// Receiver noise temperature.
    pub t_receiver: f64,
    /// Gain at the first time, volts per kelvin.
    pub gain: f64,
    /// Relative gain change over the whole run.
    pub drift: f64,
    /// Voltage noise standard deviation.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthRadiometer {
    fn default() -> Self {
        Self {
            horizon: 1000,
            t_cold: DEFAULT_T_COLD,
            t_hot: DEFAULT_T_HOT,
            t_unknown: 80.0,
            t_receiver: 500.0,
            gain: 0.02,
            drift: 0.02,
            noise_sd: 2e-3,
            seed: 0,
        }
    }
}

impl SynthRadiometer {
    pub fn gain_at(&self, t: usize) -> f64 {
        let frac = if self.horizon > 1 {
            t as f64 / (self.horizon - 1) as f64
        } else {
            0.0
        };
        self.gain * (1.0 + self.drift * frac)
    }

    pub fn generate(&self) -> Result<RadiometerStream> {
        if !(self.noise_sd >= 0.0) {
            return Err(CalError::Config("noise_sd must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = |rng: &mut ChaCha8Rng| self.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let mut s = RadiometerStream {
            t: Vec::with_capacity(self.horizon),
            v_cold: Vec::with_capacity(self.horizon),
            v_hot: Vec::with_capacity(self.horizon),
            v_unknown: Vec::with_capacity(self.horizon),
            t_cold: self.t_cold,
            t_hot: self.t_hot,
        };
        for t in 0..self.horizon {
            let g = self.gain_at(t);
            s.t.push((t + 1) as f64);
            s.v_cold.push(g * (self.t_cold + self.t_receiver) + noise(&mut rng));
            s.v_hot.push(g * (self.t_hot + self.t_receiver) + noise(&mut rng));
            s.v_unknown.push(g * (self.t_unknown + self.t_receiver) + noise(&mut rng));
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> DynamicConfig {
        DynamicConfig {
            proposals: 300,
            accepted: 200,
            seed: 3,
            ..DynamicConfig::default()
        }
    }

    #[test]
    fn defaults_apply_without_metadata() {
        let s = RadiometerStream::read_csv("t,v_cold,v_hot,v_unknown\n1,1.0,2.0,0.5\n".as_bytes()).unwrap();
        assert_eq!((s.t_cold, s.t_hot), (DEFAULT_T_COLD, DEFAULT_T_HOT));
        assert_eq!(s.v_unknown, vec![0.5]);
    }

    #[test]
    fn metadata_overrides_temperatures() {
        let text = "#t_cold=10\n# t_hot = 20\nt,v_cold,v_hot,v_unknown\n1,1,2,3\n2,1,2,3\n";
        let s = RadiometerStream::read_csv(text.as_bytes()).unwrap();
        assert_eq!((s.t_cold, s.t_hot), (10.0, 20.0));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn bad_row_reports_line() {
        let text = "#t_cold=10\nt,v_cold,v_hot,v_unknown\n1,1,2,3\n2,1,x,3\n";
        match RadiometerStream::read_csv(text.as_bytes()) {
            Err(CalError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let short = "t,v_cold,v_hot,v_unknown\n1,1,2\n";
        match RadiometerStream::read_csv(short.as_bytes()) {
            Err(CalError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_header_and_inverted_references() {
        assert!(matches!(
            RadiometerStream::read_csv("t,a,b,c\n".as_bytes()),
            Err(CalError::Parse { line: 1, .. })
        ));
        let inverted = "#t_cold=30\n#t_hot=20\nt,v_cold,v_hot,v_unknown\n1,1,2,3\n";
        assert!(matches!(
            RadiometerStream::read_csv(inverted.as_bytes()),
            Err(CalError::Config(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let s = SynthRadiometer {
            horizon: 50,
            ..SynthRadiometer::default()
        }
        .generate()
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(RadiometerStream::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn noiseless_stable_stream_is_flat() {
        let s = SynthRadiometer {
            horizon: 200,
            drift: 0.0,
            noise_sd: 0.0,
            ..SynthRadiometer::default()
        }
        .generate()
        .unwrap();
        let stat = calibrate_radiometer(&s, Method::Mf2, &quick()).unwrap();
        assert!(stat.sigma_hat < 1e-9);
        assert!((stat.estimate[0] - 80.0).abs() < 1e-8);
        let md1 = calibrate_radiometer(&s, Method::Md1, &quick()).unwrap();
        assert!(md1.sigma_hat < 1e-2, "{}", md1.sigma_hat);
        assert!((md1.estimate[100] - 80.0).abs() < 1e-3);
    }

    #[test]
    fn unsupported_method() {
        let s = SynthRadiometer {
            horizon: 10,
            ..SynthRadiometer::default()
        }
        .generate()
        .unwrap();
        assert!(calibrate_radiometer(&s, Method::Mb1, &quick()).is_err());
    }
}
