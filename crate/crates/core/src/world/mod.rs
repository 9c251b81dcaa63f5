//! Deterministic synthetic world: catalog, users, paginated sessions, and the oracle scorers
//! that stand in for a learned preference model and a relevance gate.

mod io;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GenRecError, Result};
use crate::rng;
use crate::tokenizer::{Codebook, ItemEmbedding, ItemId, SemanticId, SidTrie};

pub use io::{
    read_catalog, read_embeddings, read_examples, read_sessions, read_users, write_catalog, write_embeddings,
    write_examples, write_sessions, write_users,
};

pub type UserId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_items: usize,
    pub n_categories: usize,
    pub dim: usize,
    /// Per-component standard deviation of item latents around their category center.
    pub item_jitter: f64,
    pub n_users: usize,
    pub pages_per_user: usize,
    pub page_size: usize,
    /// Per-component standard deviation of user preferences around the favourite category center.
    pub user_jitter: f64,
    /// Standard deviation of the Gaussian noise added to click probabilities.
    pub click_noise: f64,
    pub pref_slope: f64,
    pub pref_offset: f64,
    /// Orders happen with probability `order_gamma · preference` per clicked item.
    pub order_gamma: f64,
    /// Exposure sampling weight is `exp(utility / exposure_temperature)`, where utility is
    /// `preference · latent + popularity_weight · popularity`.
    pub exposure_temperature: f64,
    /// Weight of the item popularity term in exposure utility. Nonzero values make logged
    /// exposures lean toward popular items rather than purely toward user preference.
    pub popularity_weight: f64,
    /// Exposed-only items kept in a page target.
    pub exposure_cap: usize,
    /// Generation retries until this fraction of pages has at least two positives.
    pub min_multi_positive_fraction: f64,
    pub max_retries: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_categories: 16,
            dim: 16,
            item_jitter: 0.15,
            n_users: 500,
            pages_per_user: 6,
            page_size: 8,
            user_jitter: 0.15,
            click_noise: 0.1,
            pref_slope: 6.0,
            pref_offset: 0.0,
            order_gamma: 0.4,
            exposure_temperature: 0.1,
            popularity_weight: 0.3,
            exposure_cap: 8,
            min_multi_positive_fraction: 0.3,
            max_retries: 8,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GenRecError::InvalidConfig(m.to_string()));
        if self.n_categories == 0 || self.n_items < self.n_categories {
            return bad("need n_items ≥ n_categories ≥ 1");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.page_size == 0 || self.page_size > self.n_items {
            return bad("need 1 ≤ page_size ≤ n_items");
        }
        if self.pages_per_user == 0 {
            return bad("pages_per_user must be positive");
        }
        if self.exposure_temperature.is_nan() || self.exposure_temperature <= 0.0 {
            return bad("exposure_temperature must be positive");
        }
        if self.item_jitter < 0.0 || self.user_jitter < 0.0 || self.click_noise < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.order_gamma) {
            return bad("order_gamma must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn preference_model(&self) -> PreferenceModel {
        PreferenceModel {
            slope: self.pref_slope,
            offset: self.pref_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    pub category: u32,
    /// Standard-normal popularity, used only by exposure sampling.
    pub popularity: f64,
    pub latent: Vec<f64>,
}

impl Item {
    pub fn embedding(&self) -> ItemEmbedding {
        ItemEmbedding {
            item_id: self.item_id,
            vector: self.latent.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub centers: Vec<Vec<f64>>,
    pub items: Vec<Item>,
}

impl Catalog {
    pub fn embeddings(&self) -> Vec<ItemEmbedding> {
        self.items.iter().map(Item::embedding).collect()
    }

    /// Item ids are dense indices into `items`.
    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.items.get(id as usize).filter(|it| it.item_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub preference: Vec<f64>,
    pub noise_scale: f64,
}

/// Ordered ⊆ clicked ⊆ exposed, each list in exposure order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PageInteraction {
    pub exposed: Vec<ItemId>,
    pub clicked: Vec<ItemId>,
    pub ordered: Vec<ItemId>,
}

impl PageInteraction {
    /// 𝒪 ∪ 𝒞 in exposure order.
    pub fn positives(&self) -> &[ItemId] {
        &self.clicked
    }

    /// Items ordered by interaction intensity: orders, then clicks-only, then exposures-only
    /// (at most `exposure_cap` of the latter). Ties keep page position order.
    pub fn intensity_order(&self, exposure_cap: usize) -> Vec<ItemId> {
        let ordered: BTreeSet<_> = self.ordered.iter().copied().collect();
        let clicked: BTreeSet<_> = self.clicked.iter().copied().collect();
        let mut out: Vec<ItemId> = self.ordered.clone();
        out.extend(self.clicked.iter().filter(|i| !ordered.contains(i)));
        out.extend(self.exposed.iter().filter(|i| !clicked.contains(i)).take(exposure_cap));
        out
    }

    pub fn is_nested(&self) -> bool {
        let exposed: BTreeSet<_> = self.exposed.iter().collect();
        let clicked: BTreeSet<_> = self.clicked.iter().collect();
        exposed.len() == self.exposed.len()
            && self.clicked.iter().all(|c| exposed.contains(c))
            && self.ordered.iter().all(|o| clicked.contains(o))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user_id: UserId,
    pub pages: Vec<PageInteraction>,
}

/// SID-level view of a training example; this is what the model consumes and what the
/// example file stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidExample {
    pub user_id: UserId,
    /// History SIDs in chronological order; empty means no history yet.
    pub prompt: Vec<SemanticId>,
    /// Page target in interaction-intensity order.
    pub target: Vec<SemanticId>,
    /// `positive_flags[i]` marks `target[i]` as an ordered or clicked item.
    pub positive_flags: Vec<bool>,
}

impl SidExample {
    pub fn positives(&self) -> impl Iterator<Item = &SemanticId> {
        self.target.iter().zip(&self.positive_flags).filter(|(_, p)| **p).map(|(s, _)| s)
    }

    pub fn has_positive(&self) -> bool {
        self.positive_flags.iter().any(|p| *p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub user_id: UserId,
    pub page_idx: usize,
    /// Positives of all earlier pages, chronological.
    pub prompt_items: Vec<ItemId>,
    /// Page items in target order.
    pub target_items: Vec<ItemId>,
    /// 𝒟⁺ = 𝒪 ∪ 𝒞 of the page.
    pub positives: Vec<ItemId>,
    pub sids: SidExample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    pub slope: f64,
    pub offset: f64,
}

impl Default for PreferenceModel {
    fn default() -> Self {
        Self { slope: 6.0, offset: 0.0 }
    }
}

impl PreferenceModel {
    pub fn score_vector(&self, preference: &[f64], latent: &[f64]) -> Result<f64> {
        if preference.len() != latent.len() {
            return Err(GenRecError::DimensionMismatch {
                expected: preference.len(),
                got: latent.len(),
            });
        }
        Ok(logistic(self.slope * dot(preference, latent) + self.offset))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        (dot(a, b) / d).clamp(-1.0, 1.0)
    }
}

fn gaussian_vector(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Normalizes to unit length and rounds to `f32` precision, the precision of the embedding file.
fn unit_f32(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    for x in &mut v {
        *x = ((*x / n) as f32) as f64;
    }
    v
}

/// Category centers on the unit sphere; item latents are jittered centers, renormalized.
/// Categories are assigned round-robin so every category is populated.
pub fn generate_catalog(config: &WorldConfig, seed: u64) -> Result<Catalog> {
    if config.n_categories == 0 || config.n_items < config.n_categories || config.dim == 0 {
        return Err(GenRecError::InvalidConfig(
            "need n_items ≥ n_categories ≥ 1 and dim ≥ 1".into(),
        ));
    }
    let mut center_rng = rng::stream(seed, &["world", "centers"]);
    let centers: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|_| unit_f32(gaussian_vector(&mut center_rng, config.dim, 1.0)))
        .collect();
    let mut item_rng = rng::stream(seed, &["world", "items"]);
    let mut pop_rng = rng::stream(seed, &["world", "popularity"]);
    let items = (0..config.n_items)
        .map(|i| {
            let category = i % config.n_categories;
            let jitter = gaussian_vector(&mut item_rng, config.dim, config.item_jitter);
            let latent = centers[category].iter().zip(&jitter).map(|(c, j)| c + j).collect();
            let popularity: f64 = StandardNormal.sample(&mut pop_rng);
            Item {
                item_id: i as ItemId,
                category: category as u32,
                popularity: (popularity as f32) as f64,
                latent: unit_f32(latent),
            }
        })
        .collect();
    Ok(Catalog { centers, items })
}

/// Each user prefers one category: preference is that center plus jitter, normalized.
pub fn generate_users(config: &WorldConfig, catalog: &Catalog, seed: u64) -> Vec<UserProfile> {
    (0..config.n_users)
        .map(|u| {
            let mut r = rng::stream(seed, &["world", "user", &u.to_string()]);
            let fav = r.random_range(0..catalog.centers.len());
            let jitter = gaussian_vector(&mut r, config.dim, config.user_jitter);
            let pref = catalog.centers[fav].iter().zip(&jitter).map(|(c, j)| c + j).collect();
            UserProfile {
                user_id: u as UserId,
                preference: unit_f32(pref),
                noise_scale: config.click_noise,
            }
        })
        .collect()
}

pub fn oracle_preference(model: &PreferenceModel, user: &UserProfile, item: &Item) -> Result<f64> {
    model.score_vector(&user.preference, &item.latent)
}

/// Gate input: 0 for SIDs outside the catalog, otherwise the best leaf item's cosine to the
/// user preference mapped to [0, 1].
pub fn oracle_relevance(user: &UserProfile, sid: &SemanticId, trie: &SidTrie, catalog: &Catalog) -> f64 {
    let Some(items) = trie.items(sid) else {
        return 0.0;
    };
    items
        .iter()
        .filter_map(|&id| catalog.item(id))
        .map(|it| 0.5 * (1.0 + cosine(&user.preference, &it.latent)))
        .fold(0.0, f64::max)
}

/// Generated world bundle with the lookups the oracles need.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub catalog: Catalog,
    pub users: Vec<UserProfile>,
}

impl World {
    pub fn generate(config: &WorldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let catalog = generate_catalog(config, seed)?;
        let users = generate_users(config, &catalog, seed);
        Ok(Self {
            config: config.clone(),
            catalog,
            users,
        })
    }

    pub fn user(&self, id: UserId) -> Option<&UserProfile> {
        self.users.get(id as usize).filter(|u| u.user_id == id)
    }
}

/// Scores semantic IDs for a user against the world's catalog. This is the preference and
/// relevance oracle used for rewards and for R@K.
#[derive(Debug, Clone, Copy)]
pub struct SidOracle<'a> {
    pub catalog: &'a Catalog,
    pub trie: &'a SidTrie,
    pub codebook: &'a Codebook,
    pub model: PreferenceModel,
}

impl SidOracle<'_> {
    pub fn relevance(&self, user: &UserProfile, sid: &SemanticId) -> f64 {
        oracle_relevance(user, sid, self.trie, self.catalog)
    }

    /// Best preference among the items at a valid SID's leaf; `None` for non-catalog SIDs.
    pub fn leaf_preference(&self, user: &UserProfile, sid: &SemanticId) -> Option<f64> {
        let items = self.trie.items(sid)?;
        items
            .iter()
            .filter_map(|&id| self.catalog.item(id))
            .filter_map(|it| self.model.score_vector(&user.preference, &it.latent).ok())
            .reduce(f64::max)
    }

    /// Preference score used as the dense reward. Catalog SIDs score their best leaf item.
    /// Non-catalog SIDs with in-range codes are scored on their reconstructed embedding, which
    /// is exactly the blind spot the relevance gate exists to close.
    pub fn reward_preference(&self, user: &UserProfile, sid: &SemanticId) -> f64 {
        if let Some(p) = self.leaf_preference(user, sid) {
            return p;
        }
        match self.codebook.reconstruct(sid) {
            Ok(v) => self.model.score_vector(&user.preference, &v).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    }
}

fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

fn simulate_user(world: &World, user: &UserProfile, rng: &mut impl Rng) -> Session {
    let cfg = &world.config;
    let model = cfg.preference_model();
    let utilities: Vec<f64> = world
        .catalog
        .items
        .iter()
        .map(|it| dot(&user.preference, &it.latent) + cfg.popularity_weight * it.popularity)
        .collect();
    let mut pages = Vec::with_capacity(cfg.pages_per_user);
    for _ in 0..cfg.pages_per_user {
        // Gumbel top-k: sampling without replacement proportional to exp(u / T)
        let mut keys: Vec<(f64, usize)> = utilities
            .iter()
            .enumerate()
            .map(|(i, u)| (u / cfg.exposure_temperature + gumbel(rng), i))
            .collect();
        keys.select_nth_unstable_by(cfg.page_size - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        keys.truncate(cfg.page_size);
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut page = PageInteraction::default();
        for &(_, idx) in &keys {
            let item = &world.catalog.items[idx];
            page.exposed.push(item.item_id);
            let pref = model.score_vector(&user.preference, &item.latent).unwrap_or(0.0);
            let noise: f64 = StandardNormal.sample(rng);
            let p_click = (pref + user.noise_scale * noise).clamp(0.0, 1.0);
            let click_draw: f64 = rng.random();
            let order_draw: f64 = rng.random();
            if click_draw < p_click {
                page.clicked.push(item.item_id);
                if order_draw < cfg.order_gamma * pref {
                    page.ordered.push(item.item_id);
                }
            }
        }
        pages.push(page);
    }
    Session {
        user_id: user.user_id,
        pages,
    }
}

pub fn multi_positive_fraction(sessions: &[Session]) -> f64 {
    let (multi, total) = sessions
        .iter()
        .flat_map(|s| &s.pages)
        .fold((0usize, 0usize), |(m, t), p| (m + usize::from(p.positives().len() >= 2), t + 1));
    if total == 0 {
        0.0
    } else {
        multi as f64 / total as f64
    }
}

/// Simulates paginated sessions for every user. Retries with a fresh seed-derived stream until
/// the multi-positive page fraction reaches `min_multi_positive_fraction`.
pub fn simulate_sessions(world: &World, seed: u64) -> Result<Vec<Session>> {
    let cfg = &world.config;
    cfg.validate()?;
    let mut last = 0.0;
    for attempt in 0..=cfg.max_retries {
        let sessions: Vec<Session> = world
            .users
            .iter()
            .map(|u| {
                let mut r = rng::stream(seed, &["sessions", &attempt.to_string(), &u.user_id.to_string()]);
                simulate_user(world, u, &mut r)
            })
            .collect();
        last = multi_positive_fraction(&sessions);
        if last >= cfg.min_multi_positive_fraction {
            return Ok(sessions);
        }
    }
    Err(GenRecError::InvalidConfig(format!(
        "multi-positive page fraction {last:.3} stays below {} after {} attempts",
        cfg.min_multi_positive_fraction,
        cfg.max_retries + 1
    )))
}

/// One example per page: history = positives of earlier pages, target = page items by
/// interaction intensity.
pub fn build_training_examples(
    sessions: &[Session],
    sid_of: &HashMap<ItemId, SemanticId>,
    exposure_cap: usize,
) -> Result<Vec<TrainingExample>> {
    let lookup = |id: ItemId| {
        sid_of
            .get(&id)
            .cloned()
            .ok_or_else(|| GenRecError::InvalidEmbedding(format!("item {id} has no semantic ID")))
    };
    let mut out = Vec::new();
    for session in sessions {
        let mut history: Vec<ItemId> = Vec::new();
        for (page_idx, page) in session.pages.iter().enumerate() {
            let target_items = page.intensity_order(exposure_cap);
            let positives = page.positives().to_vec();
            let positive_flags = target_items.iter().map(|i| positives.contains(i)).collect();
            let sids = SidExample {
                user_id: session.user_id,
                prompt: history.iter().map(|&i| lookup(i)).collect::<Result<_>>()?,
                target: target_items.iter().map(|&i| lookup(i)).collect::<Result<_>>()?,
                positive_flags,
            };
            out.push(TrainingExample {
                user_id: session.user_id,
                page_idx,
                prompt_items: history.clone(),
                target_items,
                positives: positives.clone(),
                sids,
            });
            history.extend(positives);
        }
    }
    Ok(out)
}

/// Seeded choice of users whose pages are held out entirely from training.
pub fn heldout_users(user_ids: impl IntoIterator<Item = UserId>, fraction: f64, seed: u64) -> BTreeSet<UserId> {
    let mut ids: Vec<UserId> = user_ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut rng::stream(seed, &["split", "users"]));
    let n = (fraction * ids.len() as f64).round() as usize;
    ids.into_iter().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> WorldConfig {
        WorldConfig {
            n_items: 200,
            n_categories: 4,
            dim: 8,
            n_users: 30,
            pages_per_user: 4,
            page_size: 6,
            min_multi_positive_fraction: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_item_catalog_is_unit_norm() {
        let cfg = WorldConfig {
            n_items: 1,
            n_categories: 1,
            ..small_config()
        };
        let cat = generate_catalog(&cfg, 11).unwrap();
        assert_eq!(cat.items.len(), 1);
        assert!((norm(&cat.items[0].latent) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn catalog_rejects_bad_counts() {
        let cfg = WorldConfig {
            n_items: 2,
            n_categories: 3,
            ..small_config()
        };
        assert!(matches!(generate_catalog(&cfg, 0), Err(GenRecError::InvalidConfig(_))));
    }

    #[test]
    fn preference_closed_forms() {
        let m = PreferenceModel::default();
        let user = UserProfile {
            user_id: 0,
            preference: vec![1.0, 0.0],
            noise_scale: 0.0,
        };
        let orth = Item {
            item_id: 0,
            category: 0,
            popularity: 0.0,
            latent: vec![0.0, 1.0],
        };
        let same = Item {
            latent: vec![1.0, 0.0],
            ..orth.clone()
        };
        assert_eq!(oracle_preference(&m, &user, &orth).unwrap(), 0.5);
        assert!((oracle_preference(&m, &user, &same).unwrap() - 0.997_527_376).abs() < 1e-8);
        let bad = Item {
            latent: vec![1.0],
            ..orth
        };
        assert!(matches!(
            oracle_preference(&m, &user, &bad),
            Err(GenRecError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn relevance_extremes() {
        let cat = Catalog {
            centers: vec![],
            items: vec![
                Item {
                    item_id: 0,
                    category: 0,
                    popularity: 0.0,
                    latent: vec![0.6, 0.8],
                },
                Item {
                    item_id: 1,
                    category: 0,
                    popularity: 0.0,
                    latent: vec![-0.6, -0.8],
                },
            ],
        };
        let trie = SidTrie::from_pairs(
            3,
            [(0, SemanticId::new([0, 0, 0])), (1, SemanticId::new([1, 0, 0]))],
        );
        let user = UserProfile {
            user_id: 0,
            preference: vec![0.6, 0.8],
            noise_scale: 0.0,
        };
        assert!((oracle_relevance(&user, &SemanticId::new([0, 0, 0]), &trie, &cat) - 1.0).abs() < 1e-12);
        assert!(oracle_relevance(&user, &SemanticId::new([1, 0, 0]), &trie, &cat).abs() < 1e-12);
        assert_eq!(oracle_relevance(&user, &SemanticId::new([2, 0, 0]), &trie, &cat), 0.0);
    }

    #[test]
    fn sessions_are_nested_and_deterministic() {
        let cfg = small_config();
        let world = World::generate(&cfg, 5).unwrap();
        let a = simulate_sessions(&world, 5).unwrap();
        let b = simulate_sessions(&world, 5).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.pages.len(), cfg.pages_per_user);
            for p in &s.pages {
                assert!(p.is_nested());
                assert_eq!(p.exposed.len(), cfg.page_size);
            }
        }
    }

    #[test]
    fn impossible_multi_positive_floor_is_reported() {
        let cfg = WorldConfig {
            min_multi_positive_fraction: 1.1,
            max_retries: 1,
            ..small_config()
        };
        let world = World::generate(&cfg, 1).unwrap();
        assert!(matches!(simulate_sessions(&world, 1), Err(GenRecError::InvalidConfig(_))));
    }

    #[test]
    fn intensity_ordering() {
        let page = PageInteraction {
            exposed: vec![3, 1, 2],
            clicked: vec![1, 2],
            ordered: vec![1],
        };
        // exposure order 3,1,2 with 𝒪={1}, 𝒞={1,2}
        assert_eq!(page.intensity_order(8), vec![1, 2, 3]);
        let quiet = PageInteraction {
            exposed: vec![5, 4, 6],
            ..Default::default()
        };
        assert_eq!(quiet.intensity_order(8), vec![5, 4, 6]);
        assert_eq!(quiet.intensity_order(2), vec![5, 4]);
    }

    #[test]
    fn examples_follow_chronology() {
        let sessions = vec![Session {
            user_id: 0,
            pages: vec![
                PageInteraction {
                    exposed: vec![0, 1, 2],
                    clicked: vec![0, 1],
                    ordered: vec![0],
                },
                PageInteraction {
                    exposed: vec![2, 3],
                    clicked: vec![],
                    ordered: vec![],
                },
                PageInteraction {
                    exposed: vec![1, 3],
                    clicked: vec![3],
                    ordered: vec![],
                },
            ],
        }];
        let sid_of: HashMap<_, _> = (0..4).map(|i| (i, SemanticId::new([i, 0, 0]))).collect();
        let ex = build_training_examples(&sessions, &sid_of, 8).unwrap();
        assert_eq!(ex.len(), 3);
        assert!(ex[0].prompt_items.is_empty());
        assert_eq!(ex[1].prompt_items, vec![0, 1]);
        assert_eq!(ex[2].prompt_items, vec![0, 1]);
        assert_eq!(ex[2].target_items, vec![3, 1]);
        assert_eq!(ex[2].sids.positive_flags, vec![true, false]);
        let missing: HashMap<ItemId, SemanticId> = HashMap::new();
        assert!(matches!(
            build_training_examples(&sessions, &missing, 8),
            Err(GenRecError::InvalidEmbedding(_))
        ));
    }
}
