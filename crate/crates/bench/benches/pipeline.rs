use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hopguard::channel::{propagate, ChannelConfig};
use hopguard::harness::{run_trial, CellKey, ExperimentConfig};
use hopguard::phy::{build_packet, generate_sts, PacketConfig, PulseShape, StsCounterState, STS_GAP_CHIPS};
use hopguard::receiver::{cross_correlate, receive_packet, ReceiverConfig};

fn sts(c: &mut Criterion) {
    let state = StsCounterState::new([0x5a; 16], 1 << 40, 4096);
    c.bench_function("generate_sts_4096", |b| b.iter(|| generate_sts(black_box(&state)).unwrap()));
}

fn receiver(c: &mut Criterion) {
    let pkt = PacketConfig::legitimate();
    let sts = generate_sts(&StsCounterState::new([1; 16], 9, pkt.sts_pulses())).unwrap();
    let packet = build_packet(&pkt, &sts, &[0u8; 8]).unwrap();
    let capture = propagate(&packet, 0, &ChannelConfig::default(), None, 3);
    let cfg = ReceiverConfig::default();
    let pulse = PulseShape::root_raised_cosine(pkt.samples_per_pulse);
    let rmarker = capture.local(capture.truth.legit_rmarker());
    let nominal = rmarker + (STS_GAP_CHIPS * pkt.samples_per_pulse) as i64;
    let spacing = pkt.sts_pulse_spacing_chips * pkt.samples_per_pulse;
    c.bench_function("cross_correlate_btw400", |b| {
        b.iter(|| cross_correlate(black_box(&capture), &sts, &pulse, nominal, spacing, &cfg).unwrap())
    });
    c.bench_function("receive_packet", |b| b.iter(|| receive_packet(black_box(&capture), &sts, &pkt, &cfg)));
}

fn trial(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let cell = CellKey { sir_db: -26.0, tsy_us: -1.0 };
    let mut k = 0;
    c.bench_function("attacked_dstwr_trial", |b| {
        b.iter(|| {
            k += 1;
            run_trial(&cfg, cell, k).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = sts, receiver, trial
}
criterion_main!(benches);
