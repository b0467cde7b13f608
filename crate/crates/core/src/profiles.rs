//! Built-in workload profiles.
//!
//! Numbers approximate single-V100 (16 GB) instances on a 10 Gbps network with
//! FP16 Adam training; they are stand-ins for a one-time profiling run.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::perf_model::{MemoryModel, WorkloadProfile};

const GB: f64 = 1e9;
const V100_MEMORY: f64 = 16.0 * GB;
/// 10 Gbps.
const BETA_10GBPS: f64 = 8e-10;
const SPOT_PRICE: f64 = 0.918;
const ONDEMAND_PRICE: f64 = 3.06;

pub const NAMES: &[&str] = &["toy", "resnet", "vgg", "bert", "gpt2", "gpt3"];

pub fn by_name(name: &str) -> Result<WorkloadProfile> {
    Ok(match name {
        "toy" => two_depth_toy(),
        "resnet" => resnet_like(),
        "vgg" => vgg_like(),
        "bert" => bert_like(),
        "gpt2" => gpt2_like(),
        "gpt3" => gpt3_like(),
        other => {
            return Err(Error::InvalidProfile(format!(
                "unknown built-in profile {other:?}; expected one of {NAMES:?}"
            )))
        }
    })
}

/// Six-instance toy: a 3-stage pipeline trains 50 samples/s, a 2-stage one 30
/// samples/s, and synchronization is free.
pub fn two_depth_toy() -> WorkloadProfile {
    WorkloadProfile {
        name: "toy".into(),
        total_compute_per_microbatch: 1.0,
        param_bytes_total: 0.0,
        activation_bytes_per_boundary: 0.0,
        minibatch_size: 10,
        microbatch_size: 1,
        device_memory: 1.0,
        memory_per_stage: MemoryModel {
            fixed_bytes: 0.0,
            per_stage_bytes: 0.0,
        },
        alpha: 0.0,
        beta: 0.0,
        spot_price: 1.0,
        ondemand_price: 3.0,
        pipeline_rate: Some(BTreeMap::from([(2, 30.0), (3, 50.0)])),
        epoch_size: 1_000_000,
        tokens_per_sample: 1,
    }
}

/// GPT-2 1.5B, sequence length 1024.
pub fn gpt2_like() -> WorkloadProfile {
    WorkloadProfile {
        name: "gpt2".into(),
        total_compute_per_microbatch: 0.8,
        param_bytes_total: 3.0 * GB,
        activation_bytes_per_boundary: 5e7,
        minibatch_size: 128,
        microbatch_size: 1,
        device_memory: V100_MEMORY,
        memory_per_stage: MemoryModel {
            fixed_bytes: 3.0 * GB,
            per_stage_bytes: 24.0 * GB,
        },
        alpha: 5e-5,
        beta: BETA_10GBPS,
        spot_price: SPOT_PRICE,
        ondemand_price: ONDEMAND_PRICE,
        pipeline_rate: None,
        epoch_size: 2_000_000,
        tokens_per_sample: 1024,
    }
}

/// GPT-3 6.7B; needs at least 20 stages to fit.
pub fn gpt3_like() -> WorkloadProfile {
    WorkloadProfile {
        name: "gpt3".into(),
        total_compute_per_microbatch: 3.6,
        param_bytes_total: 13.4 * GB,
        activation_bytes_per_boundary: 8e7,
        minibatch_size: 64,
        microbatch_size: 1,
        device_memory: V100_MEMORY,
        memory_per_stage: MemoryModel {
            fixed_bytes: 2.0 * GB,
            per_stage_bytes: 275.0 * GB,
        },
        alpha: 5e-5,
        beta: BETA_10GBPS,
        spot_price: SPOT_PRICE,
        ondemand_price: ONDEMAND_PRICE,
        pipeline_rate: None,
        epoch_size: 2_000_000,
        tokens_per_sample: 2048,
    }
}

/// BERT-Large, sequence length 512.
pub fn bert_like() -> WorkloadProfile {
    WorkloadProfile {
        name: "bert".into(),
        total_compute_per_microbatch: 0.9,
        param_bytes_total: 0.68 * GB,
        activation_bytes_per_boundary: 2e7,
        minibatch_size: 1024,
        microbatch_size: 8,
        device_memory: V100_MEMORY,
        memory_per_stage: MemoryModel {
            fixed_bytes: 4.0 * GB,
            per_stage_bytes: 10.0 * GB,
        },
        alpha: 5e-5,
        beta: BETA_10GBPS,
        spot_price: SPOT_PRICE,
        ondemand_price: ONDEMAND_PRICE,
        pipeline_rate: None,
        epoch_size: 4_000_000,
        tokens_per_sample: 512,
    }
}

/// ResNet-152 on 32x32 images.
pub fn resnet_like() -> WorkloadProfile {
    WorkloadProfile {
        name: "resnet".into(),
        total_compute_per_microbatch: 0.12,
        param_bytes_total: 0.12 * GB,
        activation_bytes_per_boundary: 8e6,
        minibatch_size: 2048,
        microbatch_size: 32,
        device_memory: V100_MEMORY,
        memory_per_stage: MemoryModel {
            fixed_bytes: 2.0 * GB,
            per_stage_bytes: 6.0 * GB,
        },
        alpha: 5e-5,
        beta: BETA_10GBPS,
        spot_price: SPOT_PRICE,
        ondemand_price: ONDEMAND_PRICE,
        pipeline_rate: None,
        epoch_size: 50_000,
        tokens_per_sample: 1,
    }
}

/// VGG-19 on 32x32 images.
pub fn vgg_like() -> WorkloadProfile {
    WorkloadProfile {
        name: "vgg".into(),
        total_compute_per_microbatch: 0.1,
        param_bytes_total: 0.29 * GB,
        activation_bytes_per_boundary: 6e6,
        minibatch_size: 2048,
        microbatch_size: 32,
        device_memory: V100_MEMORY,
        memory_per_stage: MemoryModel {
            fixed_bytes: 2.0 * GB,
            per_stage_bytes: 7.0 * GB,
        },
        alpha: 5e-5,
        beta: BETA_10GBPS,
        spot_price: SPOT_PRICE,
        ondemand_price: ONDEMAND_PRICE,
        pipeline_rate: None,
        epoch_size: 50_000,
        tokens_per_sample: 1,
    }
}
