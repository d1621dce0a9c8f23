mod common;

use common::*;
use ertis::pdm::{
    pack_channels, pdm_decode, pdm_encode, unpack_channel, Measurement, MeasurementMeta, PdmDecoder,
};
use ertis::waveform::WaveformSpec;
use proptest::prelude::*;

#[test]
fn sine_at_40_khz_round_trips_above_40_db() {
    let snr = tone_snr_db(40e3, 0.5, ertis::DEFAULT_CAPTURE_BITS);
    assert!(snr >= 40.0, "{snr:.1} dB");
}

#[test]
fn chirp_round_trips_above_40_db() {
    let n = 65_536;
    let chirp = WaveformSpec::default().synthesize(ertis::FS_PDM).unwrap();
    let mut x = vec![0.0; n];
    let start = 5_000;
    for (v, c) in x[start..].iter_mut().zip(chirp.samples()) {
        *v = 0.5 * c / max_abs(chirp.samples());
    }
    let y = pdm_round_trip(&x);
    let dec = PdmDecoder::new(ertis::FS_PDM, ertis::DEFAULT_DECIMATION, n).unwrap();
    let mut delayed = vec![0.0];
    delayed.extend_from_slice(&x[..n - 1]);
    let r = dec.filter_decimate(&delayed).unwrap()[PDM_SKIP..].to_vec();
    // the reference and its time derivative absorb small gain and delay errors
    let mut dr = vec![0.0; r.len()];
    for i in 1..r.len() - 1 {
        dr[i] = 0.5 * (r[i + 1] - r[i - 1]);
    }
    let snr = fitted_snr_db(&y, &[r, dr], dec.fs_out());
    assert!(snr >= 40.0, "{snr:.1} dB");
}

#[test]
fn constant_inputs_map_to_bit_density() {
    let density = |v: f64| {
        let bits = pdm_encode(&vec![v; 100_000]).unwrap();
        bits.iter().filter(|b| **b).count() as f64 / bits.len() as f64
    };
    assert!((density(0.0) - 0.5).abs() <= 0.02);
    assert!(density(1.0) >= 0.95);
    assert!(density(-1.0) <= 0.05);
    for v in [-0.6, -0.2, 0.3, 0.7] {
        assert!((density(v) - (1.0 + v) / 2.0).abs() < 0.01, "{v}");
    }
    assert!(pdm_encode(&[1.5]).is_err());
}

#[test]
fn decode_matches_filter_of_bipolar_bits() {
    let x: Vec<f64> = (0..32_000).map(|i| 0.4 * (i as f64 * 0.01).sin()).collect();
    let bits = pdm_encode(&x).unwrap();
    let bipolar: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let dec = PdmDecoder::new(ertis::FS_PDM, 10, bits.len()).unwrap();
    let a = dec.decode(&bits).unwrap();
    let b = dec.filter_decimate(&bipolar).unwrap();
    assert_eq!(a.len(), 3_200);
    assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
    let taps = ertis::pdm::decode_taps(ertis::FS_PDM);
    let full = direct_convolve(&bipolar, &taps);
    for i in [0usize, 1, 777, 3_199] {
        assert!((a[i] - full[i * 10]).abs() < 1e-9);
    }
    assert_eq!(pdm_decode(&bits, ertis::FS_PDM, 10).unwrap(), a);
}

#[test]
fn capture_file_is_bit_identical_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ertm");
    let m = measure(&one_reflector(-10.0, 0.7), &poisson1(), 32_768);
    m.write(&path).unwrap();
    assert!(ertis::pdm::sidecar_path(&path).exists());
    assert_eq!(Measurement::read(&path).unwrap(), m);
    let again = measure(&one_reflector(-10.0, 0.7), &poisson1(), 32_768);
    assert_eq!(again.to_bytes(), m.to_bytes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pack_unpack_round_trip(
        (words, bits) in (1usize..8).prop_flat_map(|w| {
            (Just(w), prop::collection::vec(prop::collection::vec(any::<bool>(), w * 32), 1..5))
        }),
    ) {
        let channels = bits.len();
        let n_bits = words * 32;
        let stream = pack_channels(&bits, 4_500_000).unwrap();
        prop_assert_eq!(stream.n_channels(), channels);
        prop_assert_eq!(stream.payload_len(), channels * n_bits / 8);
        for (c, want) in bits.iter().enumerate() {
            prop_assert_eq!(&unpack_channel(&stream, c).unwrap(), want);
        }
    }

    #[test]
    fn measurement_bytes_round_trip(
        rows in prop::collection::vec(prop::collection::vec(-0.9f64..0.9, 64), 1..4),
        serial in any::<u32>(),
        ts in any::<u64>(),
    ) {
        let m = Measurement::from_signals(&rows, 4_500_000, serial, ts, MeasurementMeta::default()).unwrap();
        let back = Measurement::from_bytes(&m.to_bytes()).unwrap();
        prop_assert_eq!(back, m);
    }
}
