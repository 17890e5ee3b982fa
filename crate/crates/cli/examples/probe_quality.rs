//! Manual probe: Stage-1 holdout centroid error and Stage-2 adherence for
//! trained checkpoints. Not part of the shipped surface.

use hoisynth_core::anchornet::{recover_keyframe, sample_keyframes, AnchorModel};
use hoisynth_core::config::RunConfig;
use hoisynth_core::contactdm::DmBundle;
use hoisynth_core::datagen::{read_dataset, Split, TAU_CONTACT};
use hoisynth_core::metrics;
use hoisynth_core::nn::derive_seed;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data = std::path::Path::new(&args[1]);
    let anchor_ckpt = std::path::Path::new(&args[2]);
    let cfg = RunConfig::default();
    let dataset = read_dataset(data).unwrap();
    let spec = dataset.manifest.skeleton.clone();
    let (anchor, _) = AnchorModel::load(anchor_ckpt).unwrap();
    let holdout = dataset.indices(Split::UnseenHoldout);
    let mut errors = Vec::new();
    let mut carry_errors = Vec::new();
    for (j, &si) in holdout.iter().enumerate() {
        let seq = &dataset.sequences[si];
        let template = dataset.template(&seq.object_id);
        let frames = sample_keyframes(seq.frame_count(), 5).unwrap();
        for (ki, &f) in frames.iter().enumerate() {
            let kf = recover_keyframe(&anchor, seq, f, &spec, template, 4096, derive_seed(900, "probe", (j*8+ki) as u64)).unwrap();
            let err = (kf.pose.translation - seq.object[f].position_vec()).norm();
            errors.push(err);
            let in_contact = seq.contact[f][0] == 1.0 || seq.contact[f][1] == 1.0;
            if in_contact { carry_errors.push(err); }
            println!("seq {si} kf {ki} frame {f} contact {in_contact} err {:.1} cm", err*100.0);
        }
    }
    errors.sort_by(|a,b| a.partial_cmp(b).unwrap());
    carry_errors.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("median all: {:.1} cm over {}", errors[errors.len()/2]*100.0, errors.len());
    if !carry_errors.is_empty() {
        println!("median contact keyframes: {:.1} cm over {}", carry_errors[carry_errors.len()/2]*100.0, carry_errors.len());
    }
    if args.len() > 3 {
        let (dm, _) = DmBundle::load(std::path::Path::new(&args[3])).unwrap();
        let mut cp = Vec::new();
        let mut ph = Vec::new();
        let mut adh = Vec::new();
        for (j, &si) in holdout.iter().enumerate() {
            let seq = &dataset.sequences[si];
            let template = dataset.template(&seq.object_id);
            let (generated, keyframes) = hoisynth_cli::run_pipeline(&cfg, &spec, &anchor, &dm, seq, template, derive_seed(1, "probe-gen", j as u64)).unwrap();
            let flags = metrics::per_frame_contact(&generated, &spec, template, TAU_CONTACT).unwrap();
            let mut hits = 0; let mut total = 0;
            for (f, gtc) in seq.contact.iter().enumerate() {
                if gtc[0] == 1.0 || gtc[1] == 1.0 { total += 1; if flags[f][0] || flags[f][1] { hits += 1; } }
            }
            cp.push(hits as f64 / total.max(1) as f64);
            ph.push(metrics::penetration_score(&generated, &spec, template).unwrap());
            for kf in &keyframes {
                adh.push((generated.object[kf.frame_index].position_vec() - kf.pose.translation).norm());
            }
        }
        adh.sort_by(|a,b| a.partial_cmp(b).unwrap());
        println!("mean window C%: {:.3}", cp.iter().sum::<f64>()/cp.len() as f64);
        println!("mean P_hand: {:.3} cm", ph.iter().sum::<f64>()/ph.len() as f64);
        println!("median adherence: {:.1} cm", adh[adh.len()/2]*100.0);
    }
}
