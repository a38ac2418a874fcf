// Acceptance suite: one pass/fail line per criterion. Placeholder main until
// the criteria are wired in.
#include <cstdio>

int main() {
    std::puts("acceptance suite not yet implemented");
    return 1;
}
