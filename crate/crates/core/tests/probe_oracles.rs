use langdist::embedstore::LabeledDataset;
use langdist::probe::{probe_accuracy, train_probe, ProbeSchedule};
use langdist::rng::substream;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const DIM: usize = 16;

fn centers(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, "centers");
    (0..5).map(|_| (0..DIM).map(|_| rng.random_range(-4.0..4.0)).collect()).collect()
}

fn sample(seed: u64, name: &str, n: usize, centers: &[Vec<f64>], shuffle_labels: bool) -> LabeledDataset {
    let mut rng = substream(seed, name);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let items = (0..n)
        .map(|i| {
            let k = i % centers.len();
            let x = centers[k].iter().map(|c| c + noise.sample(&mut rng)).collect();
            let label = if shuffle_labels { rng.random_range(0..centers.len()) } else { k };
            (x, format!("rel{label}"))
        })
        .collect();
    LabeledDataset::from_items("syn", "m", 7, items).unwrap()
}

#[test]
fn separable_five_classes() {
    let c = centers(1);
    let train = sample(1, "train", 1000, &c, false);
    let test = sample(1, "test", 1000, &c, false);
    let m = train_probe(&train, 1e-4, &ProbeSchedule::default()).unwrap();
    assert!(probe_accuracy(&m, &test).unwrap() >= 0.99);
}

#[test]
fn shuffled_labels_sit_at_chance() {
    let c = centers(2);
    let train = sample(2, "train", 1000, &c, true);
    let test = sample(2, "test", 2000, &c, true);
    let m = train_probe(&train, 1e-4, &ProbeSchedule::default()).unwrap();
    let acc = probe_accuracy(&m, &test).unwrap();
    assert!((acc - 0.2).abs() <= 0.05, "{acc}");
}

#[test]
fn duplicated_data_gives_the_same_decisions() {
    let c = centers(3);
    let train = sample(3, "train", 500, &c, false);
    let mut doubled = train.clone();
    doubled.items.extend(train.items.iter().cloned());
    let s = ProbeSchedule::default();
    let a = train_probe(&train, 1e-2, &s).unwrap();
    let b = train_probe(&doubled, 1e-2, &s).unwrap();
    let test = sample(3, "test", 500, &c, false);
    let agree = test.items.iter().filter(|it| a.predict(&it.features) == b.predict(&it.features)).count();
    assert!(agree as f64 >= 0.99 * test.len() as f64, "{agree}");
}

#[test]
fn permuting_label_names_keeps_accuracy() {
    let c = centers(4);
    let train = sample(4, "train", 500, &c, false);
    let test = sample(4, "test", 500, &c, false);
    let rename = |l: &str| format!("z{}", 9 - l[3..].parse::<u32>().unwrap());
    let s = ProbeSchedule::default();
    let a = probe_accuracy(&train_probe(&train, 1e-3, &s).unwrap(), &test).unwrap();
    let b = probe_accuracy(&train_probe(&train.relabeled(rename), 1e-3, &s).unwrap(), &test.relabeled(rename)).unwrap();
    assert!((a - b).abs() <= 0.01, "{a} vs {b}");
}
