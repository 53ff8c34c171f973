//! Single-process replay of the reference walkthrough, steps 1 to 11, with
//! both companies played in turn and key material handed over through
//! `test.galk` and `test.ct`.

use std::fs;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::envelope::{ciphertext_from_bytes, ciphertext_to_bytes, galois_keys_from_bytes, galois_keys_to_bytes};
use super::{CliError, ErrorKind};
use crate::ckks::{CkksContext, CkksParams, DEFAULT_FLOOD_BITS};
use crate::inference::{
    encode_model, make_mask, oracle_linear, pack_records, predict_label, rotation_steps, LinearModel, APPENDIX_LABELS,
    APPENDIX_RECORDS,
};
use crate::protocol::hex;

pub const DEFAULT_DEMO_TOLERANCE: f64 = 5e-2;

#[derive(Clone, Debug)]
pub struct DemoOptions {
    pub seed: u64,
    pub tolerance: f64,
    pub flood_bits: u32,
    pub pause: bool,
    pub work_dir: PathBuf,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance: DEFAULT_DEMO_TOLERANCE,
            flood_bits: DEFAULT_FLOOD_BITS,
            pause: true,
            work_dir: PathBuf::from("."),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoReport {
    pub decrypted: [f64; 2],
    pub truth: [f64; 2],
    pub labels: [u8; 2],
    pub timings: Vec<(String, Duration)>,
}

impl DemoReport {
    pub fn max_error(&self) -> f64 {
        self.decrypted.iter().zip(&self.truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

struct Script<'a> {
    out: &'a mut dyn Write,
    input: &'a mut dyn BufRead,
    pause: bool,
    timings: Vec<(String, Duration)>,
}

impl Script<'_> {
    fn say(&mut self, text: &str) -> Result<(), CliError> {
        writeln!(self.out, "{text}")?;
        Ok(())
    }

    fn company(&mut self, name: char) -> Result<(), CliError> {
        self.say(&format!("\n============Company {name}============"))
    }

    fn step(&mut self, title: &str) -> Result<(), CliError> {
        if self.pause {
            let mut line = String::new();
            self.input.read_line(&mut line)?;
        }
        self.say(&format!("\n{title}\n"))
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> Result<T, CliError> {
        let start = Instant::now();
        let value = f();
        let took = start.elapsed();
        writeln!(self.out, " {label}: {} milliseconds", took.as_millis())?;
        self.timings.push((label.to_string(), took));
        Ok(value)
    }
}

/// Runs the walkthrough. Fails with a verify error when a decrypted score is
/// further than the tolerance from the plaintext score.
pub fn run_demo(opts: &DemoOptions, out: &mut dyn Write, input: &mut dyn BufRead) -> Result<DemoReport, CliError> {
    if !(opts.tolerance.is_finite() && opts.tolerance > 0.0) {
        return Err(CliError::config(format!("tolerance {} must be finite and positive", opts.tolerance)));
    }
    fs::create_dir_all(&opts.work_dir)?;
    let galk_path = opts.work_dir.join("test.galk");
    let ct_path = opts.work_dir.join("test.ct");
    let mut s = Script { out, input, pause: opts.pause, timings: Vec::new() };
    let mut rng_b = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut rng_a = ChaCha20Rng::seed_from_u64(opts.seed ^ 0xa);

    s.company('A')?;
    s.say("\nStep 1. Parameter Setting\n")?;
    let params = CkksParams::demo();
    let ctx = CkksContext::new(params.clone())?;
    s.say(&format!(" poly_modulus_degree: {}", params.degree()))?;
    s.say(&format!(
        " coeff_modulus size: {} ({})",
        params.total_modulus_bits(),
        params.prime_bit_lens().iter().map(u32::to_string).collect::<Vec<_>>().join(" + ")
    ))?;
    s.say(&format!(" scale: 2^{}", params.scale_log2()))?;
    s.say(&format!(" security: {}", params.security_level()))?;
    s.say(&format!(" digest: {}", hex(params.digest())))?;
    let final_scale = params.default_scale().powi(3) / *params.primes().last().expect("at least one prime") as f64;
    if ctx.flood_slot_bound(opts.flood_bits, final_scale) > crate::ckks::FLOOD_SLOT_BUDGET {
        return Err(CliError::config(crate::ckks::CkksError::FloodOverflow {
            bits: opts.flood_bits,
            max_bits: ctx.max_flood_bits(final_scale),
        }));
    }

    s.step("Step 2. Send B parameters & data encoding format")?;
    let model = LinearModel::appendix();
    s.say(&format!(" \"Input format: {{{} }}\"", model.feature_names().join(", ")))?;

    s.company('B')?;
    s.step("Step 3. Key Generation")?;
    let sk = ctx.keygen(&mut rng_b);
    s.say(" Secret key is generated! ")?;
    let steps = rotation_steps(model.block_size());
    s.timed(" GaloisKeys creation/save time", || -> Result<(), CliError> {
        let gk = ctx.galois_keygen(&sk, &steps, &mut rng_b)?;
        fs::write(&galk_path, galois_keys_to_bytes(&gk))?;
        Ok(())
    })??;
    s.say(" Galois key is generated! ")?;

    s.step("Step 4. Encode & Encrypt Test Data")?;
    let records: Vec<Vec<f64>> = APPENDIX_RECORDS.iter().map(|r| r.to_vec()).collect();
    s.say(&format!(" \"Test data : {:?}, \n   \t{:?}\"", records[0], records[1]))?;
    let batch = pack_records(&records, model.dimension(), model.block_size(), params.slot_count())
        .map_err(CliError::config)?;
    let pt = s.timed("Encoding time", || ctx.encode_default(&batch.slot_vector))??;
    s.timed("Encryption time", || -> Result<(), CliError> {
        let ct = ctx.encrypt_symmetric(&pt, &sk, &mut rng_b)?;
        fs::write(&ct_path, ciphertext_to_bytes(&ct))?;
        Ok(())
    })??;

    s.step("Step 5. Send A Evaluation Keys & Encrypted Test Data")?;
    s.say(&format!(
        " {} ({} bytes), {} ({} bytes)",
        galk_path.display(),
        fs::metadata(&galk_path)?.len(),
        ct_path.display(),
        fs::metadata(&ct_path)?.len()
    ))?;

    s.company('A')?;
    s.step("Step 6. Compute the ML Algorithm Homomorphically on the Encrypted Test Data")?;
    let level = params.max_level();
    let scale = params.default_scale();
    let num_blocks = records.len();

    s.step("Step 6-1. Encode the Model Weights")?;
    let weight_pt = ctx.encode(&encode_model(&model, num_blocks), scale, level)?;

    s.step("Step 6-2. Perform Plaintext-Ciphertext Mult.")?;
    let ct = ciphertext_from_bytes(&fs::read(&ct_path)?, &ctx).map_err(CliError::config)?;
    let mut acc = s.timed("Multiply-plain time", || ctx.multiply_plain(&ct, &weight_pt))??;

    s.step("Step 6-3. Perform Rotate-sum")?;
    let gk = galois_keys_from_bytes(&fs::read(&galk_path)?, &ctx).map_err(CliError::config)?;
    acc = s.timed("Sum-the-slots time", || -> Result<_, CliError> {
        for &step in &steps {
            let rotated = ctx.rotate_vector(&acc, step, &gk)?;
            acc = ctx.add(&acc, &rotated)?;
        }
        Ok(acc)
    })??;

    s.step("Step 6-4. Multiply a Masking Vector to Minimize Side-information")?;
    let mask_pt = ctx.encode(&make_mask(model.block_size(), num_blocks, params.slot_count()), scale, level)?;
    let masked = ctx.rescale_to_next(&ctx.multiply_plain(&acc, &mask_pt)?)?;
    let result = ctx.noise_flood(&masked, opts.flood_bits, &mut rng_a)?;
    s.say(&format!(" noise flooding: {} bits", opts.flood_bits))?;

    s.step("Step 7. Send B the Result")?;
    let result_path = opts.work_dir.join("result.ct");
    fs::write(&result_path, ciphertext_to_bytes(&result))?;
    s.say(&format!(" {}", result_path.display()))?;

    s.company('B')?;
    s.step("Step 8. Decrypt the Result & Check the Quality of the Model")?;
    let result = ciphertext_from_bytes(&fs::read(&result_path)?, &ctx).map_err(CliError::config)?;
    let pt_result = s.timed("Decryption time", || ctx.decrypt(&result, &sk))??;
    let slots = ctx.decode(&pt_result);
    let bs = model.block_size();
    let decrypted = [slots[0], slots[bs]];
    s.say(&format!("Results: {}   &   {}", decrypted[0], decrypted[1]))?;
    s.say(&format!("True Labels: {}   &   {}", APPENDIX_LABELS[0], APPENDIX_LABELS[1]))?;
    s.say(&format!("Predicted Labels: {}   &   {}", predict_label(decrypted[0]), predict_label(decrypted[1])))?;

    s.step("Step 9. If the Quality seems Okay, Send Money to A.")?;

    s.company('A')?;
    s.step("Step 10. Send the Model to B")?;

    s.company('B')?;
    s.step("Step 11. Compute the true result and check if A really gave a promised model")?;
    let truth = [oracle_linear(&records[0], &model), oracle_linear(&records[1], &model)];
    s.say(&format!("Decrypted Result: {}   &   {}", decrypted[0], decrypted[1]))?;
    s.say(&format!("True Result: {}   &   {}\n", truth[0], truth[1]))?;

    let report = DemoReport {
        decrypted,
        truth,
        labels: [predict_label(decrypted[0]), predict_label(decrypted[1])],
        timings: s.timings,
    };
    if report.max_error() > opts.tolerance {
        return Err(CliError::new(
            ErrorKind::Verify,
            format!("decrypted results differ from the plaintext by {} > {}", report.max_error(), opts.tolerance),
        ));
    }
    Ok(report)
}
