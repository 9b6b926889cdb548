use netmis_core::estim::{effect_values, EffectQuery};
use netmis_core::ident::{latent_posterior, IdentComponents, OneTypeMode};
use netmis_core::rng::replication_seed;
use netmis_core::simgen::MisclassCounts;
use netmis_core::{simulate, LinearCasf, MisclassModel, SimConfig};
use proptest::prelude::*;

fn sim(n: usize, seed: u64, pomega: f64, pu: f64, pv: f64) -> SimConfig {
    SimConfig {
        n,
        seed,
        proxy1: MisclassModel::new(pomega, pu, pv),
        proxy2: MisclassModel::new(pomega, pu, 0.0),
        ..SimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulated_networks_are_consistent(
        n in 50usize..250,
        seed in any::<u64>(),
        pomega in 0.0f64..1.0,
        pu in 0.0f64..0.5,
        pv in 0.0f64..3.0,
    ) {
        let ds = simulate(&sim(n, seed, pomega, pu, pv)).unwrap();
        let adj = &ds.latent.adjacency;
        prop_assert!(adj.is_symmetric());
        prop_assert!(adj.is_hollow());
        // proxy 2 never adds links
        prop_assert!(ds.proxy2.is_subset_of(adj));
        for i in 0..n {
            prop_assert!(ds.s1[i] <= ds.deg1[i]);
            prop_assert!(ds.s2[i] <= ds.deg2[i]);
            prop_assert!(ds.latent_s[i] <= ds.latent_deg[i]);
            prop_assert!(ds.deg2[i] <= ds.latent_deg[i]);
        }
        for proxy in [&ds.proxy1, &ds.proxy2] {
            let c = MisclassCounts::compare(adj, proxy);
            let latent: usize = ds.latent_deg.iter().map(|&d| d as usize).sum();
            prop_assert_eq!(c.latent_links, latent);
            prop_assert_eq!(c.total(), c.false_negative + c.false_positive);
            let observed = proxy.total_links();
            prop_assert_eq!(observed + c.false_negative, latent + c.false_positive);
        }
    }

    #[test]
    fn error_free_proxies_match_the_latent_network(n in 50usize..200, seed in any::<u64>()) {
        let ds = simulate(&sim(n, seed, 0.0, 0.3, 2.0)).unwrap();
        prop_assert_eq!(&ds.deg1, &ds.latent_deg);
        prop_assert_eq!(&ds.s2, &ds.latent_s);
    }

    #[test]
    fn same_seed_same_dataset(n in 50usize..150, seed in any::<u64>()) {
        let a = simulate(&sim(n, seed, 0.6, 0.2, 0.1)).unwrap();
        let b = simulate(&sim(n, seed, 0.6, 0.2, 0.1)).unwrap();
        prop_assert_eq!(a.y, b.y);
        prop_assert_eq!(a.deg1, b.deg1);
    }

    #[test]
    fn replication_seeds_depend_on_the_pair(root in any::<u64>(), rep in 0u64..10_000) {
        prop_assert_eq!(replication_seed(root, rep), replication_seed(root, rep));
        prop_assert_ne!(replication_seed(root, rep), replication_seed(root, rep + 1));
    }

    #[test]
    fn exact_components_give_point_posteriors(
        raw in prop::collection::vec(0.05f64..1.0, 3..8),
        pick in any::<prop::sample::Index>(),
        p1 in 0.05f64..0.95,
    ) {
        let total: f64 = raw.iter().sum();
        let f: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let k = f.len();
        let comps = IdentComponents::exact(f.clone());
        let n = pick.index(k) as u32;
        for s in 0..=n {
            for mode in [OneTypeMode::NoFalsePositive, OneTypeMode::NoFalseNegative] {
                let post = latent_posterior(0, s, n, &[0.0], &comps, f[n as usize], p1, mode, 1e-9).unwrap();
                let mass: f64 = post.probs.iter().sum();
                prop_assert!((mass - 1.0).abs() < 1e-12);
                let support: Vec<_> = post.support().collect();
                prop_assert_eq!(support.len(), 1);
                prop_assert_eq!(support[0].0, (s, n));
            }
        }
    }

    #[test]
    fn linear_effects_are_linear_in_theta(
        a in prop::collection::vec(-3.0f64..3.0, 7),
        b in prop::collection::vec(-3.0f64..3.0, 7),
        w in -2.0f64..2.0,
    ) {
        let model = LinearCasf::exposure_design();
        let queries = [
            EffectQuery::treatment(0, 0.0, 3),
            EffectQuery::treatment(2, 1.0, 4),
            EffectQuery::spillover(1, 1.0, 3),
            EffectQuery::spillover(3, 0.0, 5),
        ];
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + w * y).collect();
        let (ea, eb, em) = (effect_values(&model, &a, &queries), effect_values(&model, &b, &queries), effect_values(&model, &mix, &queries));
        for q in 0..queries.len() {
            prop_assert!((em[q] - (ea[q] + w * eb[q])).abs() < 1e-9);
        }
    }
}
