mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Barrier;

use common::*;
use lakekit::run::RunOptions;
use lakekit::{BranchClass, Error, Policy, Ref, Repo, MAIN};

fn main_head(repo: &Repo) -> lakekit::CommitId {
    repo.branch(MAIN).unwrap().head
}

fn object_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir(&root.join("objects"))
}

fn walkdir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walkdir(&path));
        } else {
            out.insert(path.display().to_string(), std::fs::read(&path).unwrap());
        }
    }
    out
}

/// A repository with an aborted run branch on top of `raw_table`.
fn repo_with_aborted_run() -> (tempfile::TempDir, Repo, String) {
    let (d, repo) = repo_with_raw(&raw_rows(4, 0));
    let rec = repo
        .run_manifest(&pipeline(), "p.lk", MAIN, RunOptions::failing_at("child_table"))
        .unwrap();
    let txn = rec.txn_branch.clone().unwrap();
    (d, repo, txn)
}

#[test]
fn init_creates_single_empty_root() {
    let (d, repo) = fresh_repo();
    let head = main_head(&repo);
    assert_eq!(repo.resolve("main").unwrap(), head);
    let init = repo.get_commit(&head).unwrap();
    assert!(init.tables.is_empty());
    assert!(init.parents.is_empty());
    drop(repo);
    let err = Repo::init(d.path().join("repo"), options()).err().unwrap();
    assert!(matches!(err, Error::AlreadyInitialized(_)));
}

#[test]
fn resolves_branches_tags_and_commits() {
    let (_d, repo) = repo_with_raw(&raw_rows(3, 0));
    let c = main_head(&repo);
    repo.tag_commit("v1", &Ref::branch(MAIN)).unwrap();
    assert_eq!(repo.resolve("tag:v1").unwrap(), c);
    assert_eq!(repo.resolve(&format!("commit:{}", c.as_str())).unwrap(), c);
    assert_eq!(repo.resolve("commit:deadbeef").unwrap_err().code(), "UnknownRef");
    assert_eq!(repo.resolve("nope").unwrap_err().code(), "UnknownRef");
}

#[test]
fn branches_start_at_their_source() {
    let (_d, repo) = repo_with_raw(&raw_rows(3, 0));
    let b = repo
        .create_branch("feature", &Ref::branch(MAIN), BranchClass::Normal)
        .unwrap();
    assert_eq!(b.head, main_head(&repo));
    assert_eq!(b.created_from, b.head);
    let err = repo
        .create_branch(MAIN, &Ref::branch("feature"), BranchClass::Normal)
        .unwrap_err();
    assert!(matches!(err, Error::BranchExists(ref n) if n == MAIN));
}

#[test]
fn aborted_branches_are_guarded() {
    let (_d, repo, txn) = repo_with_aborted_run();
    let err = repo
        .create_branch("x", &Ref::branch(&txn), BranchClass::Normal)
        .unwrap_err();
    assert_eq!(err.code(), "AbortedSourceForbidden");
    let policy = Policy {
        allow_branch_from_aborted: true,
        allow_merge_from_aborted: false,
    };
    let b = repo
        .create_branch_with_policy("x", &Ref::branch(&txn), BranchClass::Normal, policy)
        .unwrap();
    assert_eq!(b.head, repo.branch(&txn).unwrap().head);
}

#[test]
fn writes_replace_one_table() {
    let (_d, repo) = fresh_repo();
    let init = main_head(&repo);
    let entry = repo.write_table(MAIN, "parent", &raw_rows(3, 0), &init).unwrap();
    assert_eq!(main_head(&repo), entry.id);
    assert_eq!(entry.commit.parents, vec![init]);
    let map = repo.table_map(&Ref::branch(MAIN)).unwrap();
    assert_eq!(map.keys().collect::<Vec<_>>(), ["parent"]);
    assert_eq!(repo.read_table(&Ref::branch(MAIN), "parent").unwrap(), raw_rows(3, 0));
}

#[test]
fn stale_writes_fail_without_moving_the_head() {
    let (_d, repo) = fresh_repo();
    let init = main_head(&repo);
    repo.write_table(MAIN, "parent", &raw_rows(3, 0), &init).unwrap();
    let head = main_head(&repo);
    let err = repo.write_table(MAIN, "parent", &raw_rows(3, 1), &init).unwrap_err();
    assert!(matches!(err, Error::CasConflict { .. }));
    assert_eq!(main_head(&repo), head);
}

#[test]
fn create_table_refuses_existing_tables() {
    let (_d, repo) = fresh_repo();
    let init = main_head(&repo);
    repo.create_table(MAIN, "parent", &raw_rows(3, 0), &init).unwrap();
    let head = main_head(&repo);
    let err = repo.create_table(MAIN, "parent", &raw_rows(3, 1), &head).unwrap_err();
    assert_eq!(err.code(), "TableExists");
}

#[test]
fn racing_writers_have_exactly_one_winner() {
    let (_d, repo) = fresh_repo();
    for trial in 0..1000 {
        let head = main_head(&repo);
        let barrier = Barrier::new(2);
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..2)
                .map(|w| {
                    let (repo, head, barrier) = (&repo, &head, &barrier);
                    s.spawn(move || {
                        let snap = raw_rows(1, trial * 2 + w);
                        barrier.wait();
                        repo.write_table(MAIN, "t", &snap, head)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let wins = results.iter().filter(|r| r.is_ok()).count();
        assert_eq!(wins, 1, "trial {trial}");
        let loser = results.into_iter().find_map(|r| r.err()).unwrap();
        assert!(matches!(loser, Error::CasConflict { .. }), "trial {trial}: {loser}");
        assert_eq!(repo.get_commit(&main_head(&repo)).unwrap().parents, vec![head]);
    }
    assert_eq!(repo.log(&Ref::branch(MAIN), usize::MAX).unwrap().len(), 1001);
}

#[test]
fn reads_travel_in_time() {
    let (_d, repo) = fresh_repo();
    let init = main_head(&repo);
    let old = repo.write_table(MAIN, "parent", &raw_rows(3, 0), &init).unwrap().id;
    repo.write_table(MAIN, "parent", &raw_rows(3, 5), &old).unwrap();
    assert_eq!(repo.read_table(&Ref::commit(&old), "parent").unwrap(), raw_rows(3, 0));
    assert_eq!(repo.read_table(&Ref::branch(MAIN), "parent").unwrap(), raw_rows(3, 5));
    let err = repo.read_table(&Ref::branch(MAIN), "child").unwrap_err();
    assert!(matches!(err, Error::NoSuchTable { ref table, .. } if table == "child"));
    let err = repo.read_table(&Ref::commit(&init), "parent").unwrap_err();
    assert_eq!(err.code(), "NoSuchTable");
}

#[test]
fn log_follows_first_parents() {
    let (_d, repo) = fresh_repo();
    let init = main_head(&repo);
    let main = Ref::branch(MAIN);
    assert_eq!(
        repo.log(&main, 10).unwrap().iter().map(|e| &e.id).collect::<Vec<_>>(),
        [&init]
    );
    let a = repo.write_table(MAIN, "a", &raw_rows(1, 0), &init).unwrap().id;
    let b = repo.write_table(MAIN, "b", &raw_rows(1, 0), &a).unwrap().id;
    let ids: Vec<_> = repo.log(&main, 10).unwrap().into_iter().map(|e| e.id).collect();
    assert_eq!(ids, [b.clone(), a, init]);
    let ids: Vec<_> = repo.log(&main, 1).unwrap().into_iter().map(|e| e.id).collect();
    assert_eq!(ids, [b]);
}

#[test]
fn deleting_a_branch_keeps_its_commits() {
    let (d, repo) = fresh_repo();
    repo.create_branch("feature", &Ref::branch(MAIN), BranchClass::Normal)
        .unwrap();
    let head = repo.branch("feature").unwrap().head;
    let c = repo.write_table("feature", "t", &raw_rows(2, 0), &head).unwrap().id;
    let objects = object_bytes(&d.path().join("repo"));
    repo.delete_branch("feature").unwrap();
    assert_eq!(repo.resolve("feature").unwrap_err().code(), "UnknownRef");
    assert_eq!(repo.read_table(&Ref::commit(&c), "t").unwrap(), raw_rows(2, 0));
    assert_eq!(object_bytes(&d.path().join("repo")), objects);
    assert!(matches!(repo.delete_branch(MAIN), Err(Error::CannotDeleteMain)));
    assert_eq!(repo.delete_branch("feature").unwrap_err().code(), "UnknownRef");
}

#[test]
fn tags_do_not_move() {
    let (_d, repo) = fresh_repo();
    let init = main_head(&repo);
    let tag = repo.tag_commit("v1", &Ref::branch(MAIN)).unwrap();
    repo.write_table(MAIN, "t", &raw_rows(2, 0), &init).unwrap();
    assert_eq!(repo.resolve("tag:v1").unwrap(), init);
    assert_eq!(tag.target, init);
    let err = repo.tag_commit("v1", &Ref::branch(MAIN)).unwrap_err();
    assert!(matches!(err, Error::TagExists(_)));
    let head = main_head(&repo);
    repo.tag_commit("v2", &Ref::commit(&head)).unwrap();
    assert_eq!(repo.resolve("tag:v2").unwrap(), head);
}

#[test]
fn branching_writes_no_objects() {
    let (_d, repo) = repo_with_raw(&raw_rows(50, 0));
    let before = repo.stats();
    for i in 0..20 {
        repo.create_branch(&format!("b{i}"), &Ref::branch(MAIN), BranchClass::Normal)
            .unwrap();
    }
    assert_eq!(repo.stats().object_writes, before.object_writes);
}

#[test]
fn history_is_sound_and_rooted() {
    let (_d, repo, txn) = repo_with_aborted_run();
    repo.create_branch("f", &Ref::branch(MAIN), BranchClass::Normal)
        .unwrap();
    let head = repo.branch("f").unwrap().head;
    repo.write_table("f", "x", &raw_rows(2, 0), &head).unwrap();
    let report = repo.fsck().unwrap();
    assert!(report.is_clean(), "{:?}", report.problems);
    let root = repo.log(&Ref::branch(MAIN), usize::MAX).unwrap().pop().unwrap().id;
    for b in repo.list_branches().unwrap() {
        assert!(repo.ancestors(&b.head).unwrap().contains(&root), "{}", b.name);
    }
    assert!(repo.is_aborted_lineage(&repo.branch(&txn).unwrap().head).unwrap());
}

#[test]
fn objects_survive_reopen_unchanged() {
    let (d, repo) = repo_with_raw(&raw_rows(10, 0));
    let root = d.path().join("repo");
    let head = main_head(&repo);
    let snap = repo.snapshot_id(&Ref::branch(MAIN), "raw_table").unwrap();
    let commit = repo.get_commit(&head).unwrap();
    let bytes = object_bytes(&root);
    let err = Repo::open(&root, options()).err().unwrap();
    assert!(matches!(err, Error::RepoLocked(_)));
    drop(repo);

    let repo = Repo::open(&root, options()).unwrap();
    assert_eq!(main_head(&repo), head);
    assert_eq!(repo.get_commit(&head).unwrap(), commit);
    assert_eq!(repo.read_snapshot(&snap).unwrap(), raw_rows(10, 0));
    assert_eq!(object_bytes(&root), bytes);
}
