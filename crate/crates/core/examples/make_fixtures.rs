//! Regenerates the files under `fixtures/`.
//!
//! ```text
//! cargo run -p xfr-core --example make_fixtures -- fixtures
//! ```

use std::fs;
use std::path::PathBuf;

use xfr_core::calibration::fit_pic;
use xfr_core::eval::QuestionSuite;
use xfr_core::face::encode_png;
use xfr_core::synth::{gaussian_scores, render_face, FaceParams};
use xfr_core::{CalibrationSet, FaceImage, Pipeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    fs::create_dir_all(dir.join("pair"))?;

    let id = FaceParams::from_seed(11);
    fs::write(dir.join("pair/a.png"), encode_png(&render_face(&id, 160, 180)))?;
    fs::write(dir.join("pair/b.png"), encode_png(&render_face(&id.jittered(1), 150, 170)))?;
    fs::write(dir.join("pair/c.png"), encode_png(&render_face(&FaceParams::from_seed(12), 160, 180)))?;

    let mut f = fs::File::create(dir.join("gaussian_scores.csv"))?;
    gaussian_scores(10_000, (0.7, 0.1), (0.2, 0.1), 20_240)?.write_csv(&mut f)?;

    // mock-pipeline scores on a synthetic population
    let p = Pipeline::reference();
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for s in 1_000..1_300u64 {
        let person = FaceParams::from_seed(s);
        let a = FaceImage::new(render_face(&person, 160, 180), "a")?;
        let b = FaceImage::new(render_face(&person.jittered(s), 150, 170), "b")?;
        let c = FaceImage::new(render_face(&FaceParams::from_seed(s + 10_000), 160, 180), "c")?;
        genuine.push(p.verify(&a, &b)?.record.score);
        impostor.push(p.verify(&a, &c)?.record.score);
    }
    let faces = CalibrationSet::new(genuine, impostor)?;
    faces.write_csv(fs::File::create(dir.join("face_scores.csv"))?)?;
    fs::write(dir.join("pic_faces.json"), fit_pic(&faces)?.to_json())?;

    let suite = QuestionSuite::from_path(dir.join("questions.yaml"))?;
    fs::write(dir.join("questions_canonical.yaml"), serde_yaml::to_string(&suite.canonical_only())?)?;
    Ok(())
}
