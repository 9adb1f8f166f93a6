//! JSON persistence for [`PrototypeBank`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::PrototypeBank;
use crate::error::{Error, Result};
use crate::model::UnitEmbedding;

const BANK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankFile {
    version: u32,
    num_classes: usize,
    dim: usize,
    kappa: f64,
    tau_sim: f64,
    seed: u64,
    prototypes: Vec<Vec<Vec<f64>>>,
}

pub fn bank_to_json(bank: &PrototypeBank) -> Result<String> {
    let file = BankFile {
        version: BANK_VERSION,
        num_classes: bank.num_classes(),
        dim: bank.dim(),
        kappa: bank.kappa(),
        tau_sim: bank.tau_sim(),
        seed: bank.seed(),
        prototypes: bank
            .prototypes()
            .iter()
            .map(|class| class.iter().map(|p| p.as_slice().to_vec()).collect())
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

/// Parses and fully validates a bank; any broken bank invariant is an
/// [`Error::InvariantViolation`].
pub fn bank_from_json(text: &str) -> Result<PrototypeBank> {
    let file: BankFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let violation = |msg: String| Error::InvariantViolation(format!("bank: {msg}"));
    if file.version != BANK_VERSION {
        return Err(violation(format!("unsupported version {}", file.version)));
    }
    if file.prototypes.len() != file.num_classes {
        return Err(violation(format!(
            "num_classes is {} but {} prototype lists are present",
            file.num_classes,
            file.prototypes.len()
        )));
    }
    let mut prototypes = Vec::with_capacity(file.num_classes);
    for (c, class) in file.prototypes.into_iter().enumerate() {
        let mut out = Vec::with_capacity(class.len());
        for (k, p) in class.into_iter().enumerate() {
            if p.len() != file.dim {
                return Err(violation(format!(
                    "class {} prototype {}: dimension {} != {}",
                    c + 1,
                    k + 1,
                    p.len(),
                    file.dim
                )));
            }
            out.push(
                UnitEmbedding::new(p)
                    .map_err(|e| violation(format!("class {} prototype {}: {e}", c + 1, k + 1)))?,
            );
        }
        prototypes.push(out);
    }
    PrototypeBank::new(prototypes, file.kappa, file.tau_sim, file.seed).map_err(|e| violation(e.to_string()))
}

pub fn write_bank(bank: &PrototypeBank, path: &Path) -> Result<()> {
    fs::write(path, bank_to_json(bank)?)?;
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<PrototypeBank> {
    bank_from_json(&fs::read_to_string(path)?)
}
