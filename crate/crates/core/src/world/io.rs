//! Line-delimited text formats for the world artifacts.
//!
//! * catalog: `item_id<TAB>category<TAB>popularity<TAB>latent_csv`
//! * embeddings: `item_id<TAB>vector_csv` (also the import path for external embeddings)
//! * users: `user_id<TAB>noise_scale<TAB>preference_csv`
//! * sessions: `user_id<TAB>page_idx<TAB>exposed_csv<TAB>clicked_csv<TAB>ordered_csv`
//! * examples: `user_id<TAB>prompt_sids<TAB>target_sids<TAB>positive_flags`, SIDs as
//!   `s1,s2,s3` joined by `;`, flags as `1`/`0` joined by `,`

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::{Catalog, Item, PageInteraction, Session, SidExample, UserProfile};
use crate::error::{GenRecError, Result};
use crate::tokenizer::{ItemEmbedding, SemanticId};

fn join<T: Display>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn parse_list<T: FromStr>(s: &str, sep: char, what: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(sep)
        .map(|x| {
            x.parse::<T>()
                .map_err(|e| GenRecError::Format(format!("bad {what} `{x}`: {e}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(s: &str, what: &str) -> Result<T>
where
    T::Err: Display,
{
    s.parse::<T>()
        .map_err(|e| GenRecError::Format(format!("bad {what} `{s}`: {e}")))
}

fn fields<R: BufRead>(r: R, n: usize) -> impl Iterator<Item = Result<Vec<String>>> {
    r.lines().enumerate().filter_map(move |(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) if l.is_empty() => None,
        Ok(l) => {
            let parts: Vec<String> = l.split('\t').map(str::to_string).collect();
            if parts.len() != n {
                Some(Err(GenRecError::Format(format!(
                    "line {}: expected {n} tab-separated fields, found {}",
                    i + 1,
                    parts.len()
                ))))
            } else {
                Some(Ok(parts))
            }
        }
    })
}

pub fn write_catalog<W: Write>(catalog: &Catalog, mut w: W) -> Result<()> {
    for it in &catalog.items {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            it.item_id,
            it.category,
            it.popularity,
            join(&it.latent, ",")
        )?;
    }
    Ok(())
}

/// Reads items back; category centers are not persisted.
pub fn read_catalog<R: BufRead>(r: R) -> Result<Catalog> {
    let items = fields(r, 4)
        .map(|f| {
            let f = f?;
            Ok(Item {
                item_id: parse_one(&f[0], "item id")?,
                category: parse_one(&f[1], "category")?,
                popularity: parse_one(&f[2], "popularity")?,
                latent: parse_list(&f[3], ',', "latent component")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, it) in items.iter().enumerate() {
        if it.item_id as usize != i {
            return Err(GenRecError::Format(format!("catalog item ids must be dense, found {} at row {i}", it.item_id)));
        }
    }
    Ok(Catalog {
        centers: Vec::new(),
        items,
    })
}

pub fn write_embeddings<W: Write>(embeddings: &[ItemEmbedding], mut w: W) -> Result<()> {
    for e in embeddings {
        writeln!(w, "{}\t{}", e.item_id, join(&e.vector, ","))?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<Vec<ItemEmbedding>> {
    fields(r, 2)
        .map(|f| {
            let f = f?;
            Ok(ItemEmbedding {
                item_id: parse_one(&f[0], "item id")?,
                vector: parse_list(&f[1], ',', "embedding component")?,
            })
        })
        .collect()
}

pub fn write_users<W: Write>(users: &[UserProfile], mut w: W) -> Result<()> {
    for u in users {
        writeln!(w, "{}\t{}\t{}", u.user_id, u.noise_scale, join(&u.preference, ","))?;
    }
    Ok(())
}

pub fn read_users<R: BufRead>(r: R) -> Result<Vec<UserProfile>> {
    fields(r, 3)
        .map(|f| {
            let f = f?;
            Ok(UserProfile {
                user_id: parse_one(&f[0], "user id")?,
                noise_scale: parse_one(&f[1], "noise scale")?,
                preference: parse_list(&f[2], ',', "preference component")?,
            })
        })
        .collect()
}

pub fn write_sessions<W: Write>(sessions: &[Session], mut w: W) -> Result<()> {
    for s in sessions {
        for (idx, p) in s.pages.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                s.user_id,
                idx,
                join(&p.exposed, ","),
                join(&p.clicked, ","),
                join(&p.ordered, ",")
            )?;
        }
    }
    Ok(())
}

/// Pages of one user must be contiguous and numbered from zero.
pub fn read_sessions<R: BufRead>(r: R) -> Result<Vec<Session>> {
    let mut sessions: Vec<Session> = Vec::new();
    for f in fields(r, 5) {
        let f = f?;
        let user_id = parse_one(&f[0], "user id")?;
        let page_idx: usize = parse_one(&f[1], "page index")?;
        let page = PageInteraction {
            exposed: parse_list(&f[2], ',', "item id")?,
            clicked: parse_list(&f[3], ',', "item id")?,
            ordered: parse_list(&f[4], ',', "item id")?,
        };
        if !page.is_nested() {
            return Err(GenRecError::Format(format!(
                "user {user_id} page {page_idx} violates ordered ⊆ clicked ⊆ exposed"
            )));
        }
        match sessions.last_mut() {
            Some(s) if s.user_id == user_id => {
                if page_idx != s.pages.len() {
                    return Err(GenRecError::Format(format!("user {user_id}: page {page_idx} out of order")));
                }
                s.pages.push(page);
            }
            _ => {
                if page_idx != 0 {
                    return Err(GenRecError::Format(format!("user {user_id}: first page has index {page_idx}")));
                }
                sessions.push(Session {
                    user_id,
                    pages: vec![page],
                });
            }
        }
    }
    Ok(sessions)
}

fn join_sids(sids: &[SemanticId]) -> String {
    join(sids, ";")
}

fn parse_sids(s: &str) -> Result<Vec<SemanticId>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(str::parse).collect()
}

pub fn write_examples<'a, W: Write>(examples: impl IntoIterator<Item = &'a SidExample>, mut w: W) -> Result<()> {
    for e in examples {
        let flags: Vec<u8> = e.positive_flags.iter().map(|&p| u8::from(p)).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.user_id,
            join_sids(&e.prompt),
            join_sids(&e.target),
            join(&flags, ",")
        )?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(r: R) -> Result<Vec<SidExample>> {
    fields(r, 4)
        .map(|f| {
            let f = f?;
            let flags: Vec<u8> = parse_list(&f[3], ',', "positive flag")?;
            let ex = SidExample {
                user_id: parse_one(&f[0], "user id")?,
                prompt: parse_sids(&f[1])?,
                target: parse_sids(&f[2])?,
                positive_flags: flags.iter().map(|&b| b == 1).collect(),
            };
            if ex.positive_flags.len() != ex.target.len() || flags.iter().any(|&b| b > 1) {
                return Err(GenRecError::Format(format!(
                    "example for user {}: flags do not match target",
                    ex.user_id
                )));
            }
            Ok(ex)
        })
        .collect()
}
