use std::io::BufReader;

use proptest::prelude::*;
use servokit::formats::*;
use servokit::sim::{episode_setup, run_indexed_episode, EpisodeConfig};
use servokit_core::matching::particles_to_grid;
use servokit_core::{GridDims, ScoreMatrix};

fn scores_strategy() -> impl Strategy<Value = ScoreMatrix> {
    (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
        let n = r * c;
        proptest::collection::vec(0u32..8, n * n).prop_map(move |counts| {
            // dyadic entries are exact in f32
            let mut data = Vec::with_capacity(n * n);
            for row in counts.chunks(n) {
                let total: u32 = row.iter().sum::<u32>() + 1;
                let pad = total.next_power_of_two();
                data.extend(row.iter().enumerate().map(|(j, &w)| {
                    let w = if j == 0 { w + 1 + pad - total } else { w };
                    w as f64 / pad as f64
                }));
            }
            ScoreMatrix::new(GridDims::new(r, c), GridDims::new(r, c), data).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn score_container_roundtrip(s in scores_strategy()) {
        let mut buf = Vec::new();
        write_score_matrix(&mut buf, &s).unwrap();
        prop_assert_eq!(buf.len(), 24 + 4 * s.data().len());
        prop_assert_eq!(read_score_matrix(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn tensor_container_keeps_shape(s in scores_strategy(), k in 2usize..6) {
        let t = particles_to_grid(&s, k).unwrap();
        let back = read_tensor(encode_tensor(&t).unwrap().as_slice()).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        prop_assert_eq!(back.channels(), k * k);
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }
}

#[test]
fn scene_file_roundtrip() {
    let (scene, ..) = episode_setup(&EpisodeConfig::default(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    write_scene(std::fs::File::create(&path).unwrap(), &scene).unwrap();
    let back = read_scene(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, scene);
}

#[test]
fn scene_with_mismatched_ids_is_rejected() {
    let (mut scene, ..) = episode_setup(&EpisodeConfig::default(), 0).unwrap();
    scene.descriptor_ids.pop();
    let mut buf = Vec::new();
    write_scene(&mut buf, &scene).unwrap();
    assert!(matches!(read_scene(buf.as_slice()), Err(servokit::FormatError::Invalid(_))));
}

#[test]
fn trajectory_jsonl_matches_episode() {
    let result = run_indexed_episode(&EpisodeConfig::default(), 1);
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &result.trajectory).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), result.trajectory.len());
    let lines = read_trajectory(BufReader::new(buf.as_slice())).unwrap();
    for (line, rec) in lines.iter().zip(&result.trajectory) {
        assert_eq!(line.step, rec.step);
        assert_eq!(line.te_mm, rec.te_mm);
        assert_eq!(line.pose.to_pose(), rec.pose);
        assert_eq!(line.twist, <[f64; 6]>::from(rec.twist.to_vector()));
    }
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["step", "pose", "twist", "te_mm", "re_deg", "mode"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}
