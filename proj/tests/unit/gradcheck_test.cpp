#include <gtest/gtest.h>

#include "sanet/gradcheck.hpp"

using namespace sanet;

TEST(Gradcheck, RelativeErrorScale) {
    EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_NEAR(relative_error(1e-3, 2e-3), 1e-3, 1e-18);
    EXPECT_NEAR(relative_error(100.0, 101.0), 1.0 / 101.0, 1e-15);
}

TEST(Gradcheck, ScopeNames) {
    EXPECT_EQ(parse_gradcheck_scope("layer"), GradcheckScope::layer);
    EXPECT_EQ(parse_gradcheck_scope("network"), GradcheckScope::network);
    EXPECT_THROW(parse_gradcheck_scope("everything"), std::invalid_argument);
}

TEST(Gradcheck, EveryOpPasses) {
    GradcheckOptions opt;
    opt.trials = 2;
    const GradcheckReport r = run_gradcheck(GradcheckScope::all, opt);
    EXPECT_EQ(r.entries.size(), 12u);
    for (const GradcheckEntry& e : r.entries) {
        EXPECT_TRUE(e.pass) << e.op << " " << e.max_rel_error;
        EXPECT_GE(e.probes, 2u * opt.probes) << e.op;
        EXPECT_LE(e.tolerance, e.op.starts_with("network") ? 1e-4 : 1e-5);
    }
    EXPECT_TRUE(r.all_passed());
}

TEST(Gradcheck, FixedSeedGivesIdenticalReport) {
    GradcheckOptions opt;
    opt.seed = 17;
    EXPECT_EQ(run_gradcheck(GradcheckScope::sam, opt).format(), run_gradcheck(GradcheckScope::sam, opt).format());
}

TEST(Gradcheck, InjectedFaultIsCaught) {
    GradcheckOptions opt;
    opt.inject_fault = true;
    for (GradcheckScope s : {GradcheckScope::layer, GradcheckScope::sam, GradcheckScope::network}) {
        const GradcheckReport r = run_gradcheck(s, opt);
        EXPECT_FALSE(r.all_passed());
        for (const GradcheckEntry& e : r.entries) EXPECT_FALSE(e.pass) << e.op;
    }
}
