//! Data-parallel map with an ordered, deterministic result.
//!
//! With the `parallel` feature disabled, [`Exec::Parallel`] runs sequentially.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Exec::Sequential => "sequential",
            Exec::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for Exec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Exec::Sequential),
            "parallel" => Ok(Exec::Parallel),
            _ => Err(Error::Config(format!(
                "unknown execution mode `{s}` (expected parallel or sequential)"
            ))),
        }
    }
}

pub fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Element-wise sum of equally long vectors, accumulated in index order.
pub fn sum_in_order(parts: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = parts.first() else {
        return Vec::new();
    };
    let mut acc = first.clone();
    for p in &parts[1..] {
        acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    acc
}
