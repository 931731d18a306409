#![allow(dead_code)]

use pracsim::{BufferConfig, Design, Generator, MitigationPolicy, SimConfig, TraceSpec};

pub fn config(design: Design, spec: &TraceSpec) -> SimConfig {
    SimConfig {
        seed: spec.seed,
        trace: spec.clone(),
        buffer: BufferConfig::with_design(design),
        mitigation: MitigationPolicy::disabled(),
        ..SimConfig::default()
    }
}

/// Trace `i` of the mixed-generator suite: every generator in turn, spread
/// over four banks where the generator supports it.
pub fn mixed(i: u64, length: u64) -> TraceSpec {
    let generator = Generator::ALL[i as usize % Generator::ALL.len()];
    let mut spec = TraceSpec::new(generator, length, 1000 + i);
    spec.banks = 4;
    spec.bank = (i % 3) as u32;
    spec.target_row = (i * 7919 % 65536) as u32;
    spec.gap = (i % 4) as u32;
    spec.start_row = (i * 4099 % 65536) as u32;
    spec
}

/// The skewed-workload suite: a zipf(1.0) and a hotset trace per seed.
pub fn skewed(seeds: u64, length: u64) -> Vec<TraceSpec> {
    (0..seeds)
        .flat_map(|s| {
            let zipf = TraceSpec {
                zipf_exponent: 1.0,
                ..TraceSpec::new(Generator::Zipf, length, 10 + s)
            };
            let hot = TraceSpec::new(Generator::Hotset, length, 10 + s);
            [zipf, hot]
        })
        .collect()
}
