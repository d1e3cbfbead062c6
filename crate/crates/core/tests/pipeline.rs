use proptest::prelude::*;

use roiskip::bitstream::Bitstream;
use roiskip::codec::{CodecConfig, SkipPolicy};
use roiskip::pipeline::{analyze_stream, decode_sequence, encode_with_masks};
use roiskip::synth::{generate_synthetic, SyntheticSpec};
use roiskip::{Homography, RoiLabel, RoiMask};

fn random_masks(w: usize, h: usize, n: usize, bits: &[u8]) -> Vec<RoiMask> {
    (0..n)
        .map(|k| {
            let mut m = RoiMask::new(w, h, 16);
            for (i, c) in m.cells.iter_mut().enumerate() {
                *c = RoiLabel::from_code(bits[(i + 7 * k) % bits.len()]);
            }
            if k == 0 {
                m = RoiMask::filled(w, h, 16, RoiLabel::Na);
            }
            m
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn arbitrary_masks_round_trip(
        seed in 0u64..1000,
        qp in 18u8..40,
        ctu in prop::sample::select(vec![16usize, 32, 64]),
        subskip in any::<bool>(),
        bits in prop::collection::vec(0u8..4, 1..40),
    ) {
        let (w, h, n) = (96, 80, 3);
        let mut spec = SyntheticSpec::new(w, h, n, seed).with_constant_motion(Homography::translation(1.5, -0.5));
        spec.noise_sigma = 1.0;
        let seq = generate_synthetic(&spec).unwrap();
        let masks = random_masks(w, h, n, &bits);
        let homs = seq.homographies.clone();
        let policy = if subskip { SkipPolicy::Subskip } else { SkipPolicy::Ns };
        let cfg = CodecConfig { qp, skip_policy: policy, ..CodecConfig::with_ctu(ctu) };
        let enc = encode_with_masks(&seq.frames, &masks, &homs, (25, 1), &cfg).unwrap();
        let bytes = enc.bitstream.to_bytes().unwrap();
        let bs = Bitstream::from_bytes(&bytes).unwrap();
        prop_assert_eq!(bs.frames.len(), n);
        for (cf, m) in bs.frames.iter().zip(&masks) {
            prop_assert_eq!(&cf.roi_mask.cells, &m.cells);
        }
        let dec = decode_sequence(&bs).unwrap();
        prop_assert_eq!(&dec.decoded, &enc.reconstructions);
        let report = analyze_stream(&bs, None).unwrap();
        prop_assert_eq!(report.stream_bits, bytes.len() as u64 * 8);
        let total: u64 = report.frames.iter().map(|f| f.bits).sum();
        prop_assert!(total <= report.stream_bits);
        for f in &report.frames {
            prop_assert!((0.0..=1.0).contains(&f.c) && (0.0..=1.0).contains(&f.a));
        }
    }

    #[test]
    fn truncated_streams_never_yield_partial_frames(cut in 1usize..200) {
        let mut spec = SyntheticSpec::new(64, 64, 2, 5).with_constant_motion(Homography::translation(1.0, 0.0));
        spec.noise_sigma = 0.5;
        let seq = generate_synthetic(&spec).unwrap();
        let masks = random_masks(64, 64, 2, &[2, 0, 1]);
        let enc = encode_with_masks(&seq.frames, &masks, &seq.homographies, (30, 1), &CodecConfig::default()).unwrap();
        let bytes = enc.bitstream.to_bytes().unwrap();
        let cut = cut.min(bytes.len() - 1);
        // a cut on a frame boundary leaves a shorter valid stream
        if let Ok(bs) = Bitstream::from_bytes(&bytes[..bytes.len() - cut]) {
            prop_assert!(bs.frames.len() < enc.bitstream.frames.len());
            prop_assert_eq!(&bs.frames[..], &enc.bitstream.frames[..bs.frames.len()]);
        }
    }
}

#[test]
fn all_non_roi_inter_frames_are_nearly_free() {
    let (w, h, n) = (128, 96, 4);
    let mut spec =
        SyntheticSpec::new(w, h, n, 8).with_constant_motion(Homography::translation(2.0, 0.0));
    spec.noise_sigma = 1.0;
    let seq = generate_synthetic(&spec).unwrap();
    let mut masks = vec![RoiMask::new(w, h, 16); n];
    masks[0] = RoiMask::filled(w, h, 16, RoiLabel::Na);
    let enc = encode_with_masks(
        &seq.frames,
        &masks,
        &seq.homographies,
        (30, 1),
        &CodecConfig::default(),
    )
    .unwrap();
    for cf in &enc.bitstream.frames[1..] {
        let ctus = (w / 16) * (h / 16);
        assert!(
            cf.payload_bits() <= 2 * ctus as u64 + 8,
            "{} bits",
            cf.payload_bits()
        );
    }
    let dec = decode_sequence(&enc.bitstream).unwrap();
    assert_eq!(dec.decoded[1].luma, dec.decoded[0].luma);
    assert_eq!(dec.decoded[3].luma, dec.decoded[0].luma);
}
