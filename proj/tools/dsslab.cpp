#include <cstdio>

int main() {
    std::puts("dsslab: subcommands pending");
    return 0;
}
