use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;

fn fake(counts: &[usize]) -> Dataset {
    let image = Arc::new(Tensor::zeros(&[1, 2, 2]));
    let mut items = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            items.push(Item {
                image: image.clone(),
                label,
                name: format!("c{label}/{i}"),
            });
        }
    }
    let class_names = (0..counts.len()).map(|c| format!("c{c}")).collect();
    Dataset {
        items,
        class_names,
        provenance: "test".into(),
        seed: None,
    }
}

fn names(ds: &Dataset) -> Vec<String> {
    ds.items.iter().map(|i| i.name.clone()).collect()
}

#[test]
fn class_order_puts_sedan_and_pickup_first() {
    let got = class_order(vec![
        "van".into(),
        "pickup".into(),
        "bus".into(),
        "sedan".into(),
    ]);
    assert_eq!(got, vec!["sedan", "pickup", "bus", "van"]);
}

#[test]
fn load_small_directory() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::full(&[1, 64, 64], 0.5f32);
    for name in ["sedan/b.png", "sedan/a.png", "pickup/c.png"] {
        write_png(&dir.path().join(name), &img).unwrap();
    }
    std::fs::write(dir.path().join("sedan/notes.txt"), "ignored").unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.counts(), vec![2, 1]);
    assert_eq!(
        names(&ds),
        vec!["sedan/a.png", "sedan/b.png", "pickup/c.png"]
    );
    assert_eq!(ds.class_names, vec!["sedan", "pickup"]);
}

#[test]
fn load_rejects_wrong_geometry_and_empty_classes() {
    let dir = tempfile::tempdir().unwrap();
    write_png(
        &dir.path().join("sedan/ok.png"),
        &Tensor::zeros(&[1, 64, 64]),
    )
    .unwrap();
    write_png(
        &dir.path().join("pickup/small.png"),
        &Tensor::zeros(&[1, 32, 32]),
    )
    .unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("small.png"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_png(
        &dir.path().join("sedan/ok.png"),
        &Tensor::zeros(&[1, 64, 64]),
    )
    .unwrap();
    std::fs::create_dir_all(dir.path().join("pickup")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("pickup"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_png(
        &dir.path().join("sedan/gray.png"),
        &Tensor::zeros(&[1, 64, 64]),
    )
    .unwrap();
    write_png(
        &dir.path().join("pickup/rgb.png"),
        &Tensor::zeros(&[3, 64, 64]),
    )
    .unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("rgb.png"), "{err}");
}

#[test]
fn png_round_trip_is_exact_on_quantized_values() {
    let dir = tempfile::tempdir().unwrap();
    let gray = Tensor::from_fn(&[1, 4, 5], |i| (i * 13 % 256) as f32 / 255.0);
    let rgb = Tensor::from_fn(&[3, 4, 5], |i| (i * 7 % 256) as f32 / 255.0);
    for (name, t) in [("g.png", &gray), ("c.png", &rgb)] {
        let p = dir.path().join(name);
        write_png(&p, t).unwrap();
        assert_eq!(&read_png(&p).unwrap(), t);
    }
    assert_eq!(quantize(0.5 / 255.0), 1);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(-0.2), 0);
}

#[test]
fn balance_examples() {
    let ds = fake(&[3548, 1067]);
    let b = ds.balance(5).unwrap();
    assert_eq!(b.counts(), vec![1067, 1067]);
    assert_eq!(b.len(), 2134);
    assert_eq!(names(&b), names(&ds.balance(5).unwrap()));
    assert_ne!(names(&b), names(&ds.balance(6).unwrap()));
    let unique: BTreeSet<_> = names(&b).into_iter().collect();
    assert_eq!(unique.len(), 2134);

    let even = fake(&[5, 5]);
    let a: BTreeSet<_> = names(&even).into_iter().collect();
    let c: BTreeSet<_> = names(&even.balance(1).unwrap()).into_iter().collect();
    assert_eq!(a, c);
    assert!(fake(&[3, 0]).balance(1).is_err());
}

#[test]
fn split_examples() {
    let ds = fake(&[1067, 1067]);
    let (train, test) = ds.split(0.8, 3).unwrap();
    assert_eq!((train.len(), test.len()), (1707, 427));
    let all: BTreeSet<_> = names(&ds).into_iter().collect();
    let tr: BTreeSet<_> = names(&train).into_iter().collect();
    let te: BTreeSet<_> = names(&test).into_iter().collect();
    assert!(tr.is_disjoint(&te));
    assert_eq!(&tr | &te, all);

    let (a, b) = fake(&[1, 1]).split(0.5, 0).unwrap();
    assert_eq!((a.len(), b.len()), (1, 1));
    assert!(fake(&[1]).split(0.8, 0).is_err());
    assert!(fake(&[5, 5]).split(1.0, 0).is_err());
    assert!(fake(&[2, 2]).split(0.01, 0).is_err());
    assert_eq!(names(&train), names(&ds.split(0.8, 3).unwrap().0));
}

#[test]
fn quota_ties_go_to_lowest_class() {
    assert_eq!(split_quotas(&[1067, 1067], 0.8), vec![854, 853]);
    assert_eq!(split_quotas(&[1, 1], 0.5), vec![1, 0]);
    assert_eq!(split_quotas(&[10, 3], 0.8), vec![8, 2]);
}

proptest! {
    #[test]
    fn split_is_stratified(counts in prop::collection::vec(1usize..60, 2..4), f in 0.1f64..0.9, seed in 0u64..100) {
        let ds = fake(&counts);
        if let Ok((train, test)) = ds.split(f, seed) {
            let n: usize = counts.iter().sum();
            prop_assert_eq!(train.len(), (f * n as f64).round() as usize);
            prop_assert_eq!(train.len() + test.len(), n);
            for (c, &k) in train.counts().iter().zip(&counts) {
                prop_assert!((*c as f64 - f * k as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn batches_partition_the_epoch(n in 1usize..300, f in 0.001f64..1.0, seed in 0u64..50, epoch in 0u64..5) {
        let batches = make_batches(n, f, seed, epoch).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let size = batch_size(n, f);
        prop_assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == size));
    }
}

#[test]
fn batch_examples() {
    assert_eq!(batch_size(1707, 0.01), 17);
    let b = make_batches(1707, 0.01, 0, 0).unwrap();
    assert_eq!(b.len(), 101);
    assert_eq!(b.last().unwrap().len(), 7);
    assert_eq!(batch_size(50, 0.01), 1);
    assert_eq!(make_batches(10, 1.0, 0, 0).unwrap().len(), 1);
    assert_ne!(
        make_batches(100, 0.1, 0, 0).unwrap(),
        make_batches(100, 0.1, 0, 1).unwrap()
    );
    assert_eq!(
        make_batches(100, 0.1, 4, 2).unwrap(),
        make_batches(100, 0.1, 4, 2).unwrap()
    );
    assert!(make_batches(0, 0.1, 0, 0).is_err());
    assert!(make_batches(5, 0.0, 0, 0).is_err());
}

#[test]
fn batch_stacking() {
    let ds = synth_generate(2, 1);
    let (x, labels) = ds.batch(&[3, 0]).unwrap();
    assert_eq!(x.shape(), &[2, 1, 64, 64]);
    assert_eq!(labels, vec![1, 0]);
    assert_eq!(&x.data()[..4096], ds.items[3].image.data());
    assert!(ds.batch(&[]).is_err());
    assert!(ds.batch(&[9]).is_err());
}

#[test]
fn synth_is_reproducible_and_loadable() {
    let a = synth_generate(16, 7);
    let b = synth_generate(16, 7);
    assert_eq!(a.len(), 32);
    assert_eq!(a.counts(), vec![16, 16]);
    for (x, y) in a.items.iter().zip(&b.items) {
        assert_eq!(x.image, y.image);
    }
    assert_ne!(a.items[0].image, synth_generate(16, 8).items[0].image);

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&a, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.counts(), vec![16, 16]);
    for (x, y) in a.items.iter().zip(&loaded.items) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.image, y.image);
    }
}

#[test]
fn pickups_are_brighter_on_average() {
    let ds = synth_generate(500, 3);
    let mean = |label: usize| {
        let imgs: Vec<_> = ds.items.iter().filter(|i| i.label == label).collect();
        imgs.iter()
            .map(|i| i.image.data().iter().map(|&v| v as f64).sum::<f64>() / 4096.0)
            .sum::<f64>()
            / imgs.len() as f64
    };
    let (sedan, pickup) = (mean(0), mean(1));
    assert!(pickup - sedan > 0.01, "sedan {sedan} pickup {pickup}");
}

#[test]
fn channel_stats_of_constant_images() {
    let ds = fake(&[2, 2])
        .map_images(|_| Ok(Tensor::full(&[1, 2, 2], 0.25)))
        .unwrap();
    let (m, s) = ds.channel_stats().unwrap();
    assert_eq!(m, vec![0.25]);
    assert!(s[0] > 0.0 && s[0] <= 1e-6);
}
