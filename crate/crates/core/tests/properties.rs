mod common;

use proptest::prelude::*;

use pracsim::buffer::{BufferConfig, Design, KTrigger, RequestBuffer};
use pracsim::cache::{CacheConfig, CacheKind};
use pracsim::config;
use pracsim::metrics::{self, WindowMode};
use pracsim::oracle::verify;
use pracsim::{simulate, ActivationEvent, CounterRef, DramGeometry, MitigationKind, MitigationPolicy, SimConfig};

// Small geometry so random traces collide on rows and counters.
fn geometry() -> DramGeometry {
    DramGeometry::new(2, 8, 16).unwrap()
}

fn events_strategy(max_len: usize) -> impl Strategy<Value = Vec<ActivationEvent>> {
    let g = geometry();
    // Mix a few hot rows into uniform noise.
    let row = prop_oneof![
        3 => 0..g.rows_per_bank,
        2 => prop::sample::select(vec![0u32, 1, 17, 40, 127]),
    ];
    prop::collection::vec((0..g.banks, row), 1..max_len).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (bank, data_row))| ActivationEvent {
                slot: i as u64,
                bank,
                data_row,
            })
            .collect()
    })
}

fn buffer_strategy() -> impl Strategy<Value = BufferConfig> {
    (
        prop::sample::select(Design::BUFFERED.to_vec()),
        2usize..12,
        1usize..6,
        1u32..6,
        prop::bool::ANY,
    )
        .prop_map(|(design, capacity, m_batch, k_limit, repcount)| BufferConfig {
            design,
            capacity: capacity.max(m_batch),
            m_batch,
            k_limit,
            k_trigger: if repcount { KTrigger::RepCount } else { KTrigger::Pending },
        })
}

fn cache_strategy() -> impl Strategy<Value = CacheConfig> {
    (
        prop::sample::select(vec![CacheKind::None, CacheKind::Lru4Way, CacheKind::TinyLfu]),
        prop::sample::select(vec![4usize, 8, 16]),
    )
        .prop_map(|(kind, entries)| CacheConfig {
            kind,
            entries,
            sketch_width: 64,
            halving_period: 0,
        })
}

fn sim_config(buffer: BufferConfig, cache: CacheConfig, mitigation: MitigationPolicy) -> SimConfig {
    SimConfig {
        geometry: geometry(),
        buffer,
        cache,
        mitigation,
        ..SimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Buffering (and caching) never changes the final counter values, and the
    /// oracle accepts every log: staleness, batch legality, shadows, accounting.
    #[test]
    fn conservation_and_oracle(
        events in events_strategy(400),
        buffer in buffer_strategy(),
        cache in cache_strategy(),
    ) {
        let chronus = sim_config(BufferConfig::with_design(Design::Chronus), CacheConfig::default(), MitigationPolicy::disabled());
        let reference = simulate(&chronus, &events, false).unwrap();
        let cfg = sim_config(buffer, cache, MitigationPolicy::disabled());
        let out = simulate(&cfg, &events, true).unwrap();
        prop_assert_eq!(&out.final_counters, &reference.final_counters);

        let mut params = cfg.verify_params();
        params.reported_counter_acts = Some(out.report.counter_acts);
        params.final_counters = Some(out.final_counters.clone());
        let verdict = verify(&events, out.log.as_ref().unwrap(), &params).unwrap();
        prop_assert!(verdict.passed(), "{:?}", verdict.violation);
        prop_assert!(verdict.max_staleness <= cfg.buffer.staleness_bound());
        // Writebacks aside, every activation costs exactly one counter RMW.
        if cfg.cache.kind == CacheKind::None {
            prop_assert_eq!(out.report.ledger.counter_rmw_bytes, events.len() as u64);
        }
    }

    /// With mitigation on, an Alert always fires by the time the counter has
    /// seen N_BO true activations, whatever is still buffered or cached.
    #[test]
    fn alerts_fire_by_n_bo(
        hot in 0u32..128,
        noise in events_strategy(300),
        buffer in buffer_strategy(),
        cache in cache_strategy(),
        n_bo in 8u8..40,
    ) {
        prop_assume!(u32::from(n_bo) > buffer.staleness_bound());
        let mut events = Vec::new();
        for (i, e) in noise.iter().enumerate() {
            events.push(ActivationEvent { slot: 0, ..*e });
            if i % 2 == 0 {
                events.push(ActivationEvent { slot: 0, bank: 0, data_row: hot });
            }
        }
        for (i, e) in events.iter_mut().enumerate() {
            e.slot = i as u64;
        }
        let mitigation = MitigationPolicy { n_bo, proactive_interval_slots: None, ..MitigationPolicy::default() };
        let cfg = sim_config(buffer, cache, mitigation);
        let out = simulate(&cfg, &events, true).unwrap();
        let verdict = verify(&events, out.log.as_ref().unwrap(), &cfg.verify_params()).unwrap();
        prop_assert!(verdict.passed(), "{:?}", verdict.violation);
        for m in &verdict.mitigations {
            prop_assert_eq!(m.kind, MitigationKind::Alert);
            prop_assert!(m.true_count <= u64::from(n_bo), "alert at true count {}", m.true_count);
        }
        // No counter may reach N_BO true activations without an alert: the
        // hot row saw at least as many activations as the alerts explain.
        let hot_acts = events.iter().filter(|e| e.bank == 0 && e.data_row == hot).count() as u64;
        prop_assert!(hot_acts < u64::from(n_bo) || !verdict.mitigations.is_empty());
    }

    #[test]
    fn runs_are_deterministic(
        events in events_strategy(200),
        buffer in buffer_strategy(),
        cache in cache_strategy(),
    ) {
        let cfg = sim_config(buffer, cache, MitigationPolicy { n_bo: 12, proactive_interval_slots: Some(17), ..MitigationPolicy::default() });
        let a = simulate(&cfg, &events, true).unwrap();
        let b = simulate(&cfg, &events, true).unwrap();
        prop_assert_eq!(a.report.to_json(), b.report.to_json());
        prop_assert_eq!(a.log, b.log);
    }

    /// Occupancy bounds and ApproxMax metadata accuracy under arbitrary inserts.
    #[test]
    fn buffer_occupancy_and_tracking(
        config in buffer_strategy(),
        requests in prop::collection::vec((0u16..8, 0u16..16), 1..300),
    ) {
        let mut b = RequestBuffer::new(0, 8, config.clone());
        for (row, byte) in requests {
            if let Some(batch) = b.insert(CounterRef::new(0, row, byte)) {
                prop_assert!(batch.items.len() <= config.m_batch);
            }
            prop_assert!(b.len() <= b.capacity());
            let lens: Vec<usize> = (0..8).map(|r| b.row_len(r)).collect();
            prop_assert!(lens.iter().all(|&l| l < config.m_batch));
            prop_assert_eq!(b.entries().count(), b.len());
            if config.design == Design::UnifiedApproxMax {
                match b.tracked() {
                    None => prop_assert!(b.is_empty()),
                    Some((row, count)) => {
                        prop_assert!(!b.is_empty());
                        prop_assert_eq!(count, lens[row as usize]);
                        prop_assert!(count >= 1 && count <= *lens.iter().max().unwrap());
                    }
                }
            }
            for e in b.entries() {
                prop_assert!(e.pending() < config.k_limit + 1);
            }
        }
        let drained = b.drain();
        prop_assert!(b.is_empty());
        prop_assert!(drained.iter().all(|batch| !batch.items.is_empty() && batch.items.len() <= config.m_batch));
    }

    #[test]
    fn sliding_window_matches_brute_force(
        stream in prop::collection::vec(0u16..6, 1..200),
        window in 1usize..40,
    ) {
        let fast = metrics::window_locality(&stream, window, WindowMode::Sliding);
        let slow = (stream.len() >= window).then(|| {
            let starts = stream.len() - window + 1;
            let sum: usize = (0..starts)
                .map(|s| {
                    let w = &stream[s..s + window];
                    w.iter().map(|r| w.iter().filter(|x| *x == r).count()).max().unwrap()
                })
                .sum();
            sum as f64 / starts as f64
        });
        prop_assert_eq!(fast, slow);
        if let Some(v) = fast {
            prop_assert!(v >= 1.0 && v <= window as f64);
        }
    }

    #[test]
    fn footprint_is_monotone(counts in prop::collection::vec(0u64..50, 1..100)) {
        let pts = metrics::footprint_percentiles(&counts, &metrics::FOOTPRINT_PERCENTILES);
        let nonzero = counts.iter().filter(|&&c| c > 0).count() as u64;
        prop_assert!(pts.windows(2).all(|w| w[0].rows <= w[1].rows));
        prop_assert!(pts.iter().all(|p| p.rows <= nonzero));
    }

    #[test]
    fn config_dump_round_trips(
        seed in any::<u64>(),
        design in prop::sample::select(Design::ALL.to_vec()),
        e_act in 0.01f64..100.0,
        interval in 0u64..1000,
    ) {
        let mut c = SimConfig { seed, ..SimConfig::default() };
        c.buffer.design = design;
        c.energy.e_act = e_act;
        config::set(&mut c, "mitigation.proactive_interval", &interval.to_string()).unwrap();
        let mut back = SimConfig::default();
        config::apply_str(&mut back, &config::dump(&c)).unwrap();
        prop_assert_eq!(back, c);
    }
}
