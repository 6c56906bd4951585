from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from publicmc import gateway as gw


def make_request(line, user="u1"):
    return gw.CommandRequest(request_id="r1", user_id=user, raw_line=line,
                             submitted_at=0.0)


@pytest.fixture()
def whitelist():
    return gw.Whitelist.parse("qsub\nqstat\nls -l\ncat\necho\n")


class TestClassify:
    @pytest.mark.parametrize("line,expected", [
        ("qsub run.job", gw.CLASS_BATCH),
        ("qstat", gw.CLASS_BATCH),
        ("qdel 3", gw.CLASS_BATCH),
        ("qnodes", gw.CLASS_BATCH),
        ("ls -l output/", gw.CLASS_OS),
        ("cat file.txt", gw.CLASS_OS),
    ])
    def test_builtin_batch_set(self, line, expected):
        assert gw.classify_command(line) == expected

    def test_unbalanced_quote(self):
        with pytest.raises(gw.CommandParseError):
            gw.classify_command('echo "unterminated')

    def test_empty(self):
        with pytest.raises(gw.CommandParseError):
            gw.classify_command("   ")

    def test_nul_byte(self):
        with pytest.raises(gw.CommandParseError):
            gw.classify_command("ls\x00")

    def test_oversized(self):
        with pytest.raises(gw.CommandParseError):
            gw.classify_command("echo " + "x" * 5000)

    def test_deterministic(self):
        assert gw.classify_command("foo bar") == gw.classify_command("foo bar")


class TestWhitelistFile:
    def test_wildcard_and_flag_entries(self):
        wl = gw.Whitelist.parse("qsub\nls -l,-a\n")
        assert wl.entries["qsub"].flags is None
        assert wl.entries["ls"].flags == frozenset({"-l", "-a"})

    def test_comments_and_blanks(self):
        wl = gw.Whitelist.parse("# header\n\nqstat  # trailing\n")
        assert set(wl.entries) == {"qstat"}

    def test_duplicate_reports_line(self):
        with pytest.raises(gw.WhitelistLoadError) as exc:
            gw.Whitelist.parse("qsub\nqstat\nqsub\n")
        assert exc.value.line == 3

    def test_bad_name_rejected(self):
        with pytest.raises(gw.WhitelistLoadError):
            gw.Whitelist.parse("Bad_Name\n")

    def test_load_from_file(self, tmp_path):
        p = tmp_path / "wl.txt"
        p.write_text("qsub\n")
        wl = gw.Whitelist.load(p, revision=7)
        assert wl.revision == 7
        assert wl.source_path == str(p)


class TestFilter:
    def test_allowed_batch(self, whitelist):
        verdict = gw.filter_command(make_request("qstat"), whitelist)
        assert verdict.allowed and verdict.command_class == gw.CLASS_BATCH

    def test_not_whitelisted(self, whitelist):
        verdict = gw.filter_command(make_request("rm -rf /"), whitelist)
        assert not verdict.allowed
        assert verdict.reason == gw.REASON_NOT_WHITELISTED

    def test_forbidden_flag(self, whitelist):
        verdict = gw.filter_command(make_request("ls -a"), whitelist)
        assert not verdict.allowed
        assert verdict.reason == gw.REASON_FORBIDDEN_FLAG

    def test_allowed_flag(self, whitelist):
        assert gw.filter_command(make_request("ls -l"), whitelist).allowed

    def test_wildcard_accepts_any_flag(self, whitelist):
        assert gw.filter_command(make_request("qsub -q -x j.job"),
                                 whitelist).allowed

    def test_parse_error_verdict(self, whitelist):
        verdict = gw.filter_command(make_request('echo "oops'), whitelist)
        assert not verdict.allowed
        assert verdict.reason == gw.REASON_PARSE_ERROR

    def test_pure_given_same_revision(self, whitelist):
        a = gw.filter_command(make_request("ls -l x"), whitelist)
        b = gw.filter_command(make_request("ls -l x"), whitelist)
        assert a == b

    @settings(max_examples=120, deadline=None)
    @given(line=st.text(max_size=200))
    def test_fuzz_never_crashes(self, line):
        wl = gw.Whitelist.parse("qsub\nqstat\nls -l\ncat\necho\n")
        verdict = gw.filter_command(make_request(line), wl)
        assert isinstance(verdict.allowed, bool)

    @settings(max_examples=80, deadline=None)
    @given(tail=st.sampled_from(["; rm -rf /", "`id`", "$(reboot)", "&& halt",
                                 "| tee /etc/passwd", "> /etc/shadow"]),
           cmd=st.sampled_from(["echo", "ls", "cat"]))
    def test_metacharacters_stay_literal(self, tail, cmd):
        # either rejected outright or kept as literal argument text;
        # nothing here ever reaches a shell
        wl = gw.Whitelist.parse("qsub\nqstat\nls -l\ncat\necho\n")
        verdict = gw.filter_command(make_request(f"{cmd} {tail}"), wl)
        if verdict.allowed:
            tokens = gw.split_command(f"{cmd} {tail}")
            assert tokens[0] == cmd


class TestWorkspaceResolution:
    def test_inside_ok(self, tmp_path):
        target = gw.resolve_in_workspace(tmp_path, "sub/file.txt")
        assert str(target).startswith(str(tmp_path.resolve()))

    def test_dotdot_escape(self, tmp_path):
        with pytest.raises(gw.WorkspaceEscape):
            gw.resolve_in_workspace(tmp_path, "../../etc/passwd")

    def test_absolute_escape(self, tmp_path):
        with pytest.raises(gw.WorkspaceEscape):
            gw.resolve_in_workspace(tmp_path, "/etc/passwd")

    def test_symlink_escape(self, tmp_path):
        ws = tmp_path / "ws"
        ws.mkdir()
        (ws / "link").symlink_to("/etc")
        with pytest.raises(gw.WorkspaceEscape):
            gw.resolve_in_workspace(ws, "link/passwd")

    @settings(max_examples=150, deadline=None)
    @given(parts=st.lists(st.sampled_from(["..", ".", "a", "b c", "...", "~",
                                           "../..", "x/y"]), max_size=6))
    def test_fuzz_contained_or_escape(self, parts):
        import tempfile
        rel = "/".join(parts) if parts else "."
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp).resolve()
            try:
                target = gw.resolve_in_workspace(Path(tmp), rel)
            except gw.WorkspaceEscape:
                return
            assert target == root or target.is_relative_to(root)


@pytest.fixture()
def dispatcher(tmp_path):
    calls = {}

    def submit_job(user_id, script):
        calls["submit"] = (user_id, script)
        return 41

    def cancel_job(user_id, job_id):
        calls["cancel"] = (user_id, job_id)

    d = gw.Dispatcher(
        tmp_path / "workspaces",
        submit_job=submit_job,
        list_jobs=lambda: [{"job_id": 1}],
        cancel_job=cancel_job,
        list_nodes=lambda: [{"node_id": "n1"}],
        username_of=lambda uid: "alice" if uid == "u1" else None,
    )
    return d, calls


class TestDispatch:
    def test_rejected_verdict_guard(self, dispatcher):
        d, _ = dispatcher
        verdict = gw.CommandVerdict(allowed=False,
                                    reason=gw.REASON_NOT_WHITELISTED)
        with pytest.raises(gw.DispatchRejected):
            d.dispatch(make_request("rm"), verdict)

    def test_qsub_reads_workspace_script(self, dispatcher):
        d, calls = dispatcher
        ws = d.workspace_for("u1")
        (ws / "run.job").write_text("#JOB cpus=1\n")
        receipt = d.dispatch(make_request("qsub run.job"),
                             gw.CommandVerdict(True, gw.CLASS_BATCH))
        assert receipt.result == {"job_id": 41}
        assert calls["submit"] == ("u1", "#JOB cpus=1\n")

    def test_qsub_missing_file(self, dispatcher):
        d, _ = dispatcher
        receipt = d.dispatch(make_request("qsub ghost.job"),
                             gw.CommandVerdict(True, gw.CLASS_BATCH))
        assert "no such file" in receipt.error

    def test_qdel(self, dispatcher):
        d, calls = dispatcher
        receipt = d.dispatch(make_request("qdel 7"),
                             gw.CommandVerdict(True, gw.CLASS_BATCH))
        assert receipt.result == {"job_id": 7}
        assert calls["cancel"] == ("u1", 7)

    def test_qstat_and_qnodes(self, dispatcher):
        d, _ = dispatcher
        assert d.dispatch(make_request("qstat"),
                          gw.CommandVerdict(True, gw.CLASS_BATCH)
                          ).result["jobs"] == [{"job_id": 1}]
        assert d.dispatch(make_request("qnodes"),
                          gw.CommandVerdict(True, gw.CLASS_BATCH)
                          ).result["nodes"] == [{"node_id": "n1"}]

    def test_cat_escape(self, dispatcher):
        d, _ = dispatcher
        with pytest.raises(gw.WorkspaceEscape):
            d.dispatch(make_request("cat ../../etc/passwd"),
                       gw.CommandVerdict(True, gw.CLASS_OS))

    def test_ls_and_cat_roundtrip(self, dispatcher):
        d, _ = dispatcher
        ws = d.workspace_for("u1")
        (ws / "out.txt").write_text("mean=3.14\n")
        listing = d.dispatch(make_request("ls"),
                             gw.CommandVerdict(True, gw.CLASS_OS))
        assert "out.txt" in listing.result["entries"]
        content = d.dispatch(make_request("cat out.txt"),
                             gw.CommandVerdict(True, gw.CLASS_OS))
        assert content.result["content"] == "mean=3.14\n"

    def test_echo_is_literal(self, dispatcher):
        d, _ = dispatcher
        receipt = d.dispatch(make_request("echo $(reboot) && halt"),
                             gw.CommandVerdict(True, gw.CLASS_OS))
        assert receipt.result["content"] == "$(reboot) && halt"
