use labelfix::io;
use labelfix::lca::{Lambda, Polarity};
use labelfix::pipeline::{self, PipelineConfig, SynthJob, SCENE_FILES};
use labelfix::synth::{CorruptionSpec, LineStatus, SynthSpec, TruthRecord};
use labelfix::vectorize::LineGraph;
use labelfix::Error;
use tempfile::TempDir;

fn job(corruption: CorruptionSpec) -> SynthJob {
    SynthJob {
        scene: SynthSpec {
            canvas: (192, 160),
            n_lines: 2,
            ..SynthSpec::default()
        },
        corruption,
    }
}

#[test]
fn bundle_reads_back_exactly() {
    let d = TempDir::new().unwrap();
    let b = pipeline::synthesize(
        &job(CorruptionSpec {
            translate_max: 5.0,
            false_fraction: 0.5,
            ..CorruptionSpec::default()
        }),
        21,
    )
    .unwrap();
    pipeline::write_bundle(d.path(), &b).unwrap();
    for f in SCENE_FILES {
        assert!(d.path().join(f).is_file(), "{f}");
    }
    assert_eq!(io::load_image(&d.path().join("image.png")).unwrap(), b.scene.image);
    assert_eq!(io::load_mask(&d.path().join("gt_mask.png")).unwrap(), b.scene.gt_mask);
    assert_eq!(io::read_polylines(&d.path().join("gt.geojson"), None).unwrap(), b.scene.gt_lines);
    assert_eq!(io::read_polylines(&d.path().join("annotations.geojson"), None).unwrap(), b.annotations);
    let truth: TruthRecord = io::read_json(&d.path().join("truth.json")).unwrap();
    assert_eq!(truth, b.truth);
    assert_eq!(truth.lines.iter().filter(|l| l.status == LineStatus::False).count(), 1);
}

#[test]
fn sidecar_maps_world_coordinates() {
    let d = TempDir::new().unwrap();
    let vector = d.path().join("roads.geojson");
    std::fs::write(
        &vector,
        r#"{"type": "FeatureCollection", "features": [
            {"type": "Feature", "id": "r1", "properties": {},
             "geometry": {"type": "LineString", "coordinates": [[1000, 2000], [1010, 2000]]}}]}"#,
    )
    .unwrap();
    let raw = io::read_polylines(&vector, None).unwrap();
    assert_eq!(raw[0].points, vec![(1000.0, 2000.0), (1010.0, 2000.0)]);
    // x' = 2x - 2000, y' = -y + 2050
    std::fs::write(io::sidecar_path(&vector), r#"{"world_to_pixel": [2, 0, -2000, 0, -1, 2050]}"#).unwrap();
    let mapped = io::read_polylines(&vector, None).unwrap();
    assert_eq!(mapped[0].id, "r1");
    assert_eq!(mapped[0].points, vec![(0.0, 50.0), (20.0, 50.0)]);
}

#[test]
fn corrected_lines_match_the_ground_truth() {
    let b = pipeline::synthesize(
        &job(CorruptionSpec {
            translate_max: 7.0,
            rotate_max: 2f64.to_radians(),
            ..CorruptionSpec::default()
        }),
        8,
    )
    .unwrap();
    let cfg = PipelineConfig::default();
    let c = pipeline::correct(&b.scene.image, &b.annotations, &cfg).unwrap();
    assert!(!c.all_rejected());
    let g = pipeline::vectorize_mask(&c.mask, &cfg.vectorize).unwrap();
    let gt = LineGraph::from_polylines(&b.scene.gt_lines).unwrap();
    let r = pipeline::evaluate(Some((&c.mask, &b.scene.gt_mask)), Some((&g, &gt)), 5.0, 50.0).unwrap();
    let (p, l) = (r.pixel.unwrap(), r.lines.unwrap());
    assert!(p.f1 >= 0.95, "{p:?}");
    assert!(l.matching.correctness >= 0.95 && l.matching.completeness >= 0.95, "{l:?}");
    // One true line here ends 2 px short of the other; the raster joins
    // them and APLS charges the extra connection, so only a loose bound.
    assert!(l.apls >= 0.5, "{l:?}");
}

#[test]
fn worker_count_does_not_change_the_result() {
    let b = pipeline::synthesize(
        &job(CorruptionSpec {
            translate_max: 6.0,
            false_fraction: 0.5,
            ..CorruptionSpec::default()
        }),
        30,
    )
    .unwrap();
    let run = |workers| {
        let cfg = PipelineConfig {
            workers,
            ..PipelineConfig::default()
        };
        let c = pipeline::correct(&b.scene.image, &b.annotations, &cfg).unwrap();
        (io::encode_mask(&c.mask).unwrap(), io::to_json_bytes(&c.report))
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(0));
}

#[test]
fn partial_config_files_take_defaults() {
    let cfg: PipelineConfig = io::parse_json(
        r#"{"lca": {"lambda": {"fixed": 3.0}, "polarity": "light"}, "tiles": {"poi_radius": 20}}"#,
        "cfg.json".as_ref(),
    )
    .unwrap();
    assert_eq!(cfg.lca.lambda, Lambda::Fixed(3.0));
    assert_eq!(cfg.lca.polarity, Polarity::Light);
    assert_eq!(cfg.tiles.poi_radius, 20.0);
    assert_eq!(cfg.tiles.window, PipelineConfig::default().tiles.window);
    assert_eq!(cfg.annotation_radius, PipelineConfig::default().annotation_radius);
    cfg.validate().unwrap();

    let bad = io::parse_json::<PipelineConfig>(r#"{"radius": 3}"#, "cfg.json".as_ref());
    assert!(matches!(bad, Err(Error::Parse { .. })));
    let cfg = PipelineConfig {
        annotation_radius: 40.0,
        ..PipelineConfig::default()
    };
    assert!(cfg.validate().is_err(), "PoI narrower than the annotation");
}

#[test]
fn empty_annotation_set_gives_an_empty_correction() {
    let b = pipeline::synthesize(&job(CorruptionSpec::default()), 2).unwrap();
    let c = pipeline::correct(&b.scene.image, &[], &PipelineConfig::default()).unwrap();
    assert!(c.mask.is_all_false());
    assert!(c.report.tiles.is_empty());
}
