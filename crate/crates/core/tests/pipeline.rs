use dtnt_core::data::{load_dataset, synth_generate, write_dataset};
use dtnt_core::fog::{apply_fog, FogParams, PRESETS};
use dtnt_core::kernels::Exec;
use dtnt_core::model::{load, save, CheckpointMeta, Model, ModelConfig};
use dtnt_core::report::ReportTable;
use dtnt_core::train::{
    evaluate, read_confusion, train, write_confusion, write_history, Hyperparams, TrainOptions,
};

#[test]
fn synth_to_report_through_the_filesystem() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    write_dataset(&synth_generate(8, 21), &data_dir).unwrap();
    let data = load_dataset(&data_dir).unwrap();
    assert_eq!(data.counts(), vec![8, 8]);
    assert_eq!(data.class_names, vec!["sedan", "pickup"]);

    let (tr, te) = data.balance(21).unwrap().split(0.75, 21).unwrap();
    let mut model = Model::<f32>::build(&ModelConfig::tiny()).unwrap();
    let hp = Hyperparams {
        epochs: 2,
        batch_fraction: 0.25,
        ..Hyperparams::default()
    };
    let out = train(&mut model, &tr, &te, &hp, TrainOptions::default()).unwrap();
    assert_eq!(out.history.len(), 2);
    write_history(&dir.path().join("history.csv"), &out.history, false).unwrap();
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("epoch,"));
    assert!(lines[3].starts_with("2,") && lines[3].ends_with(",NA"));

    let ckpt = dir.path().join("model.ckpt");
    save(&model, CheckpointMeta { epoch: 2 }, &ckpt).unwrap();
    let (model, meta) = load(&ckpt).unwrap();
    assert_eq!(meta.epoch, 2);

    let mut rows = vec![(
        "tiny".to_string(),
        "normal".to_string(),
        evaluate(&model, &te, Exec::auto()).unwrap(),
    )];
    for beta in PRESETS {
        let params = FogParams::new(beta, 64, 64).unwrap();
        let fogged = te
            .map_images(|im| Ok(apply_fog(im, &params)?.image))
            .unwrap();
        rows.push((
            "tiny".into(),
            format!("fog{beta}"),
            evaluate(&model, &fogged, Exec::auto()).unwrap(),
        ));
    }
    for (_, _, cm) in &rows {
        assert_eq!(cm.tp + cm.tn + cm.fp + cm.fn_, te.len() as u64);
    }
    let confusion = dir.path().join("confusion.csv");
    write_confusion(&confusion, &rows).unwrap();
    let back = read_confusion(&confusion).unwrap();
    assert_eq!(back, rows);

    let table = ReportTable::from_results(&back).unwrap();
    table.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(ReportTable::parse_csv(&csv).unwrap(), table);
    let conditions: Vec<&str> = table.rows.iter().map(|r| r.condition.as_str()).collect();
    assert_eq!(conditions[0], "normal");
    assert_eq!(conditions.len(), 1 + PRESETS.len());
}

#[test]
fn missing_dataset_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(&dir.path().join("absent")).is_err());
}
