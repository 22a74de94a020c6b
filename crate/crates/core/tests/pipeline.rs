//! End-to-end compress/decompress through the public API.

use co3::entropy::{Codebook, Frame, HEADER_LEN};
use co3::fpquant::{bias_polynomial, Quantizer};
use co3::{FeedbackState, FpFormat, GenNormParams};

fn hex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

/// Whole frame, header and payload, produced by an independent
/// implementation (scipy cell masses, heap-built lengths, canonical codes).
#[test]
fn frame_matches_reference_bytes() {
    let model = GenNormParams::new(0.1, 0.8, 1.3).unwrap();
    let format = FpFormat::FP4.with_scale(0.5).unwrap();
    let values = [0.0, 0.2, -0.3, 1.4, -0.74, 0.76, 2.0, -9.0, 0.49, 0.51, 0.1, -0.1];
    let block = Quantizer::new(format).quantize(&values).unwrap();
    assert_eq!(block.symbols, [4, 4, 3, 8, 2, 6, 8, 0, 5, 5, 4, 4]);

    let codebook = Codebook::new(format, model).unwrap();
    assert_eq!(codebook.code.lengths(), [4, 4, 4, 3, 2, 2, 4, 4, 4]);
    let frame = Frame::encode(&block, &codebook).unwrap();
    let expected = hex(concat!(
        "434f330121",
        "3fe0000000000000",
        "3fb999999999999a",
        "3fe999999999999a",
        "3ff4cccccccccccd",
        "000000000000000c",
        "09f9bf4a00",
    ));
    assert_eq!(frame.to_bytes(), expected);
    assert_eq!(frame.payload_bits, 35);
    assert_eq!(frame.wire_bits(), 8 * (HEADER_LEN as u64 + 5));
    assert_eq!(frame.overhead_bits(), 8 * HEADER_LEN as u64 + 5);
}

/// One user, many rounds: correct, convert, compress, then decode on the
/// receiving side from bytes alone. The residuals telescope:
/// `Σ_t (g_t − ĝ_t) = m_T + (1 − γ)·Σ_{t<T} m_t`.
#[test]
fn feedback_loop_round_trips_and_telescopes() {
    let (dim, gamma) = (512, 0.7);
    let source = GenNormParams::new(0.0, 0.05, 1.1).unwrap();
    let mut state = FeedbackState::new(dim, gamma).unwrap();
    let mut residual_sum = vec![0.0; dim];
    let mut memory_sum = vec![0.0; dim];

    for t in 0..60u64 {
        let g = source.sample(dim, t);
        let v = state.preprocess(&g).unwrap();
        let model = co3::distfit::fit_gennorm(&v).unwrap();
        let gain = bias_polynomial(model.beta.clamp(0.3, 1.6), model.std_dev(), &FpFormat::FP4).unwrap();
        let format = FpFormat::FP4.with_gain(gain).unwrap();
        let q = Quantizer::new(format);
        let block = q.quantize(&v).unwrap();
        let bytes = Frame::encode(&block, &Codebook::new(format, model).unwrap()).unwrap().to_bytes();

        let received = Frame::from_bytes(&bytes).unwrap();
        let g_hat = Quantizer::new(received.format).dequantize(&received.decode().unwrap()).unwrap();
        assert_eq!(g_hat, q.dequantize(&block).unwrap());
        assert!(bytes.len() * 8 < 32 * dim);

        for (i, m) in state.memory().iter().enumerate() {
            memory_sum[i] += m;
        }
        state.update(&g, &g_hat).unwrap();
        for i in 0..dim {
            residual_sum[i] += g[i] - g_hat[i];
        }
    }

    for i in 0..dim {
        let expect = state.memory()[i] + (1.0 - gamma) * memory_sum[i];
        assert!((residual_sum[i] - expect).abs() < 1e-9, "coordinate {i}");
    }
}

#[test]
fn sample_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            let config =
                co3::ExperimentConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!config.runs().is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
