//! Backbone catalog: per-architecture BN layer and channel totals, and the
//! parameter/transmission-size arithmetic derived from them.

use crate::error::{invalid_arg, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneCatalogEntry {
    pub name: &'static str,
    pub n_bn_layers: u64,
    pub total_bn_channels: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub name: &'static str,
    /// Full per-channel statistics: one (mean, var) pair per channel.
    pub bn_params: u64,
    /// Exact arithmetic, 4 bytes per parameter.
    pub bn_kb: f64,
    /// Four channel-shared coefficients per BN layer.
    pub fedmix_params: u64,
    /// bytes / 1024, truncated to one decimal.
    pub fedmix_kb: f64,
}

/// Published reference values for the four standard backbones, in catalog
/// order: (BN param count, BN kB, coefficient count, coefficient kB).
pub const PUBLISHED_ROWS: [(u64, f64, u64, f64); 4] = [
    (9_600, 36.0, 80, 0.3),
    (53_120, 199.0, 212, 0.8),
    (105_344, 395.0, 416, 1.6),
    (83_648, 314.0, 484, 1.8),
];

pub fn standard_catalog() -> Vec<BackboneCatalogEntry> {
    vec![
        BackboneCatalogEntry {
            name: "ResNet-18",
            n_bn_layers: 20,
            total_bn_channels: 4_800,
        },
        BackboneCatalogEntry {
            name: "ResNet-50",
            n_bn_layers: 53,
            total_bn_channels: 26_560,
        },
        BackboneCatalogEntry {
            name: "ResNet-101",
            n_bn_layers: 104,
            total_bn_channels: 52_672,
        },
        BackboneCatalogEntry {
            name: "DenseNet-121",
            n_bn_layers: 121,
            total_bn_channels: 41_824,
        },
    ]
}

pub fn backbone_stats(e: &BackboneCatalogEntry) -> Result<Table1Row> {
    if e.n_bn_layers == 0 || e.total_bn_channels == 0 {
        return invalid_arg("catalog entry counts must be positive");
    }
    let bn_params = 2 * e.total_bn_channels;
    let fedmix_params = 4 * e.n_bn_layers;
    let bn_kb = (bn_params * 4) as f64 / 1024.0;
    let fedmix_kb_exact = (fedmix_params * 4) as f64 / 1024.0;
    let fedmix_kb = (fedmix_kb_exact * 10.0).floor() / 10.0;
    Ok(Table1Row {
        name: e.name,
        bn_params,
        bn_kb,
        fedmix_params,
        fedmix_kb,
    })
}
