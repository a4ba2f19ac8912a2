use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenlink::harness::MarkovChain;
use tokenlink::phy::{sample_fading, token_loglik_table, transmit_packet};
use tokenlink::{
    context_aware_mask, detect, BigramModel, Constellation, DetectorConfig, Fading, LinkBudget, MaskSet,
    MaskingStrategy, TokenId, TokenSequence, Vocabulary,
};

fn loglik_table(c: &mut Criterion) {
    let vocab = Vocabulary::bert_base_uncased();
    let qam = Constellation::qam16();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tokens: Vec<TokenId> = (0..128).map(|_| rng.random_range(0..vocab.size() as TokenId)).collect();
    let mask = MaskSet::empty(tokens.len());
    let link = LinkBudget::for_snr_db(10.0, 1.0, 1.0).unwrap();
    let block = transmit_packet(&tokens, &mask, &vocab, &qam, Fading::Block(sample_fading(&mut rng)), link, &mut rng)
        .unwrap();
    c.bench_function("loglik_table V=30522 T=128", |b| {
        b.iter(|| token_loglik_table(black_box(&block), &vocab, &qam, &mask).unwrap())
    });
}

struct Markov {
    vocab: Vocabulary,
    packet: TokenSequence,
    model: BigramModel,
}

fn markov() -> Markov {
    let vocab = Vocabulary::new(256, 255).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let chain = MarkovChain::new(256, 16, 2.0, &mut rng).unwrap();
    let train: Vec<Vec<TokenId>> = (0..500).map(|_| chain.sample(128, &mut rng)).collect();
    let model = BigramModel::train(&train, 256, 0.05).unwrap();
    let packet = TokenSequence::new(chain.sample(128, &mut rng), &vocab).unwrap();
    Markov { vocab, packet, model }
}

fn detection(c: &mut Criterion) {
    let m = markov();
    let qam = Constellation::qam16();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask = MaskSet::empty(128);
    let link = LinkBudget::for_snr_db(0.0, 1.0, 1.0).unwrap();
    let block =
        transmit_packet(m.packet.ids(), &mask, &m.vocab, &qam, Fading::Block(sample_fading(&mut rng)), link, &mut rng)
            .unwrap();
    let table = token_loglik_table(&block, &m.vocab, &qam, &mask).unwrap();
    let cfg = DetectorConfig {
        early_stop: false,
        ..DetectorConfig::with_iters(2)
    };
    c.bench_function("detect one MAP iteration V=256 T=128", |b| {
        b.iter(|| detect(black_box(&table), &m.model, &mask, &cfg).unwrap())
    });
}

fn greedy_masking(c: &mut Criterion) {
    let m = markov();
    c.bench_function("greedy mask r=0.3 V=256 T=128", |b| {
        b.iter(|| context_aware_mask(black_box(&m.packet), 0.3, &m.model, MaskingStrategy::Greedy).unwrap())
    });
}

criterion_group!(benches, loglik_table, detection, greedy_masking);
criterion_main!(benches);
