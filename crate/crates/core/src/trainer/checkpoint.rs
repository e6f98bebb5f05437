//! Checkpoint files: one JSON header line, then little-endian `f64` sections.
//!
//! Sections in order: `g.params`, `d.params`, `g.stats`, `d.stats`,
//! `g.adam.m`, `g.adam.v`, `d.adam.m`, `d.adam.v`, then `g.ha` and `d.ha`
//! when historical averaging is on. Loading rebuilds the networks from the
//! embedded config and refuses files whose manifests or hash disagree.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::gan::GanState;
use super::{Result, TrainerError};
use crate::objectives::HistoricalAverage;

pub const FORMAT: &str = "ganlab-checkpoint";
pub const VERSION: u32 = 1;

type Manifest = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: String,
    pub data_dim: usize,
    pub classes: usize,
    pub step: u64,
    pub g_manifest: Manifest,
    pub d_manifest: Manifest,
    pub g_adam_t: u64,
    pub d_adam_t: u64,
    pub ha_counts: Option<(u64, u64)>,
    pub sections: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub payload: Vec<f64>,
}

fn bad(detail: impl Into<String>) -> TrainerError {
    TrainerError::Checkpoint(detail.into())
}

impl Checkpoint {
    pub fn from_state(s: &GanState) -> Self {
        let mut sections = Vec::new();
        let mut payload = Vec::new();
        let mut push = |name: &str, v: &[f64]| {
            sections.push((name.to_string(), v.len()));
            payload.extend_from_slice(v);
        };
        push("g.params", &s.g.flatten());
        push("d.params", &s.d.flatten());
        push("g.stats", &s.g.running_stats());
        push("d.stats", &s.d.running_stats());
        push("g.adam.m", &s.g_opt.m);
        push("g.adam.v", &s.g_opt.v);
        push("d.adam.m", &s.d_opt.m);
        push("d.adam.v", &s.d_opt.v);
        let ha_counts = match (&s.g_ha, &s.d_ha) {
            (Some(g), Some(d)) => {
                push("g.ha", g.mean());
                push("d.ha", d.mean());
                Some((g.count(), d.count()))
            }
            _ => None,
        };
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: s.config.hash(),
            config: s.config.to_text(),
            data_dim: s.g.output_width(),
            classes: s.d.output_width(),
            step: s.step,
            g_manifest: s.g.manifest(),
            d_manifest: s.d.manifest(),
            g_adam_t: s.g_opt.t,
            d_adam_t: s.d_opt.t,
            ha_counts,
            sections,
        };
        Checkpoint { header, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line"))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.format != FORMAT {
            return Err(bad(format!("not a checkpoint (format {:?})", header.format)));
        }
        if header.version != VERSION {
            return Err(bad(format!(
                "checkpoint version {} not supported (expected {VERSION})",
                header.version
            )));
        }
        let body = &bytes[nl + 1..];
        let expected: usize = header.sections.iter().map(|(_, n)| n).sum();
        if body.len() != expected * 8 {
            return Err(bad(format!(
                "payload has {} bytes, header describes {}",
                body.len(),
                expected * 8
            )));
        }
        let payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint { header, payload })
    }

    /// Hex sha256 of the serialized file.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn section(&self, name: &str) -> Result<&[f64]> {
        let mut offset = 0;
        for (n, len) in &self.header.sections {
            if n == name {
                return Ok(&self.payload[offset..offset + len]);
            }
            offset += len;
        }
        Err(bad(format!("missing section {name}")))
    }

    /// Rebuilds the training state this checkpoint was taken from.
    pub fn to_state(&self) -> Result<GanState> {
        let h = &self.header;
        let config = ExperimentConfig::parse(&h.config)?;
        if config.hash() != h.config_hash {
            return Err(bad(format!(
                "config hash mismatch: header {}, embedded config {}",
                h.config_hash,
                config.hash()
            )));
        }
        let mut s = GanState::new(&config, h.data_dim, h.classes)?;
        if s.g.manifest() != h.g_manifest || s.d.manifest() != h.d_manifest {
            return Err(bad("parameter manifest does not match the rebuilt networks"));
        }
        s.g.load_flat(self.section("g.params")?)?;
        s.d.load_flat(self.section("d.params")?)?;
        s.g.load_running_stats(self.section("g.stats")?)?;
        s.d.load_running_stats(self.section("d.stats")?)?;
        for (opt, t, tag) in [(&mut s.g_opt, h.g_adam_t, "g"), (&mut s.d_opt, h.d_adam_t, "d")] {
            let m = self.section(&format!("{tag}.adam.m"))?;
            let v = self.section(&format!("{tag}.adam.v"))?;
            if m.len() != opt.m.len() || v.len() != opt.v.len() {
                return Err(bad(format!("{tag} optimizer state has the wrong length")));
            }
            opt.t = t;
            opt.m = m.to_vec();
            opt.v = v.to_vec();
        }
        match (h.ha_counts, config.historical_averaging) {
            (Some((gc, dc)), true) => {
                let g = self.section("g.ha")?.to_vec();
                let d = self.section("d.ha")?.to_vec();
                s.g_ha = Some(HistoricalAverage::from_parts(g, gc, config.ha_lambda));
                s.d_ha = Some(HistoricalAverage::from_parts(d, dc, config.ha_lambda));
            }
            (None, false) => {}
            _ => return Err(bad("historical-average state disagrees with the config")),
        }
        s.step = h.step;
        Ok(s)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
