use parlat::eval::{lattice_density, oracle_wer};
use parlat::lattice::{prune_lattice, write_lattice_text};
use parlat::reference::brute_force_extra_costs;
use parlat::synth::{random_instance, InstanceShape};
use parlat::{DecodeConfig, Engine};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn engine(lattice_beam: f64, prune_interval: usize, overlap_prune: bool) -> Engine {
    Engine::new(DecodeConfig { num_workers: 2, lattice_beam, prune_interval, overlap_prune, ..Default::default() })
        .unwrap()
}

#[test]
fn extra_costs_match_brute_force() {
    let e = engine(f64::INFINITY, 3, true);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let (g, m) = random_instance(&mut rng, InstanceShape::default());
        let lat = e.decode(&g, &m).unwrap().lattice;
        let brute = brute_force_extra_costs(&lat).unwrap();
        for (a, b) in lat.arcs().zip(brute) {
            assert!(a.extra_cost == b || (a.extra_cost - b).abs() < 1e-4, "{} vs {b}", a.extra_cost);
        }
    }
}

#[test]
fn pruning_schedule_does_not_change_the_result() {
    let runs = [engine(2.0, 1, true), engine(2.0, 4, false), engine(2.0, 1000, true)];
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let (g, m) = random_instance(&mut rng, InstanceShape::default());
        let texts: Vec<String> =
            runs.iter().map(|e| write_lattice_text(&e.decode(&g, &m).unwrap().final_lattice().unwrap())).collect();
        assert_eq!(texts[0], texts[1]);
        assert_eq!(texts[0], texts[2]);
    }
}

#[test]
fn pruning_after_the_fact_matches_pruning_during_decoding() {
    let wide = engine(f64::INFINITY, 5, true);
    let narrow = engine(1.5, 5, true);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let (g, m) = random_instance(&mut rng, InstanceShape::default());
        let mut lat = wide.decode(&g, &m).unwrap().lattice;
        prune_lattice(&mut lat, 1.5).unwrap();
        let direct = narrow.decode(&g, &m).unwrap().lattice;
        let live = |l: &parlat::Lattice| l.arcs().filter(|a| !a.pruned).count();
        assert_eq!(live(&lat), live(&direct));
    }
}

#[test]
fn wider_beams_never_lose_paths() {
    let (tight, loose) = (engine(0.5, 4, true), engine(6.0, 4, true));
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let (g, m) = random_instance(&mut rng, InstanceShape::default());
        let (a, b) = (tight.decode(&g, &m).unwrap(), loose.decode(&g, &m).unwrap());
        let (fa, fb) = (a.final_lattice().unwrap(), b.final_lattice().unwrap());
        assert!(lattice_density(&fa, a.num_frames) <= lattice_density(&fb, b.num_frames));
        let reference = if a.words.is_empty() { vec![1] } else { a.words.clone() };
        assert!(oracle_wer(&fb, &reference).unwrap().errors <= oracle_wer(&fa, &reference).unwrap().errors);
    }
}
